#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "voxelbridge/error.hpp"

namespace voxelbridge {

/// Byte-level tokenizer over a fixed symbol alphabet plus four control
/// symbols appended after it: end-of-turn, pad, bos, unknown.
class Tokenizer {
 public:
  /// All 256 byte values; vocab 260.
  static Tokenizer bytes() {
    std::string all(256, '\0');
    for (int i = 0; i < 256; ++i) all[static_cast<std::size_t>(i)] = static_cast<char>(i);
    Tokenizer t(all);
    t.full_bytes_ = true;
    return t;
  }

  /// Restricted alphabet; bytes outside it encode to `unk`.
  static Tokenizer alphabet(std::string_view symbols) { return Tokenizer(std::string(symbols)); }

  int vocab_size() const { return static_cast<int>(symbols_.size()) + 4; }
  int eot() const { return static_cast<int>(symbols_.size()); }
  int pad() const { return eot() + 1; }
  int bos() const { return eot() + 2; }
  int unk() const { return eot() + 3; }
  bool is_control(int id) const { return id >= eot(); }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(to_id_[c] < 0 ? unk() : to_id_[c]);
    return ids;
  }

  /// Control symbols produce no text.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      require(id >= 0 && id < vocab_size(), ErrorKind::invalid_argument, "token id out of range");
      if (!is_control(id)) out.push_back(symbols_[static_cast<std::size_t>(id)]);
    }
    return out;
  }

  nlohmann::ordered_json to_json() const {
    if (full_bytes_) return {{"kind", "bytes"}};
    return {{"kind", "alphabet"}, {"alphabet", symbols_}};
  }

  static Tokenizer from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "bytes") return bytes();
    if (kind == "alphabet") return alphabet(j.at("alphabet").get<std::string>());
    fail(ErrorKind::parse, "unknown tokenizer kind " + kind);
  }

 private:
  explicit Tokenizer(std::string symbols) : symbols_(std::move(symbols)) {
    to_id_.fill(-1);
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      const auto c = static_cast<unsigned char>(symbols_[i]);
      require(to_id_[c] < 0, ErrorKind::invalid_argument, "tokenizer alphabet repeats a symbol");
      to_id_[c] = static_cast<int>(i);
    }
  }

  std::string symbols_;
  std::array<int, 256> to_id_{};
  bool full_bytes_ = false;
};

}  // namespace voxelbridge
