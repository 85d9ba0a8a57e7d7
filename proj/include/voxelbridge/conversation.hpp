#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "voxelbridge/error.hpp"

namespace voxelbridge {

enum class TaskKind { brief, detailed, dialogue, reasoning, recon_prompt, concept_loc };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::brief: return "brief";
    case TaskKind::detailed: return "detailed";
    case TaskKind::dialogue: return "dialogue";
    case TaskKind::reasoning: return "reasoning";
    case TaskKind::recon_prompt: return "recon_prompt";
    case TaskKind::concept_loc: return "concept_loc";
  }
  return "brief";
}

inline TaskKind parse_task_kind(std::string_view s) {
  for (auto k : {TaskKind::brief, TaskKind::detailed, TaskKind::dialogue, TaskKind::reasoning, TaskKind::recon_prompt,
                 TaskKind::concept_loc})
    if (to_string(k) == s) return k;
  fail(ErrorKind::parse, "unknown task kind: " + std::string(s));
}

enum class Role { human, bot };

struct Turn {
  Role role;
  std::string text;
};

inline constexpr std::string_view kImagePlaceholder = "[image]";

/// One instruction-following conversation about a single stimulus. The first
/// human turn holds exactly one `[image]` slot that the fMRI tokens replace.
struct ConversationRecord {
  std::string stimulus_id;
  TaskKind task_kind = TaskKind::brief;
  std::vector<Turn> turns;

  std::size_t placeholder() const {
    require(!turns.empty(), ErrorKind::invalid_argument, "conversation has no turns");
    const auto pos = turns.front().text.find(kImagePlaceholder);
    require(pos != std::string::npos, ErrorKind::invalid_argument, "first human turn has no [image] placeholder");
    return pos;
  }

  void validate() const {
    require(turns.size() >= 2 && turns.size() % 2 == 0, ErrorKind::invalid_argument,
            "conversation must hold complete human/bot pairs");
    for (std::size_t i = 0; i < turns.size(); ++i)
      require(turns[i].role == (i % 2 == 0 ? Role::human : Role::bot), ErrorKind::invalid_argument,
              "roles must alternate starting with human");
    std::size_t slots = 0;
    for (const auto& t : turns)
      for (auto p = t.text.find(kImagePlaceholder); p != std::string::npos; p = t.text.find(kImagePlaceholder, p + 1))
        ++slots;
    require(slots == 1, ErrorKind::invalid_argument, "conversation must contain exactly one [image] placeholder");
    placeholder();
  }
};

inline ConversationRecord make_single_turn(std::string stimulus_id, TaskKind kind, std::string_view instruction,
                                           std::string answer) {
  ConversationRecord r;
  r.stimulus_id = std::move(stimulus_id);
  r.task_kind = kind;
  r.turns.push_back({Role::human, std::string(kImagePlaceholder) + " " + std::string(instruction)});
  r.turns.push_back({Role::bot, std::move(answer)});
  return r;
}

inline nlohmann::ordered_json to_json(const ConversationRecord& r) {
  nlohmann::ordered_json j;
  j["stimulus_id"] = r.stimulus_id;
  j["task_kind"] = std::string(to_string(r.task_kind));
  j["turns"] = nlohmann::ordered_json::array();
  for (const auto& t : r.turns)
    j["turns"].push_back({{"role", t.role == Role::human ? "human" : "bot"}, {"text", t.text}});
  return j;
}

inline ConversationRecord conversation_from_json(const nlohmann::json& j) {
  try {
    ConversationRecord r;
    r.stimulus_id = j.at("stimulus_id").get<std::string>();
    r.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
    for (const auto& t : j.at("turns")) {
      const auto role = t.at("role").get<std::string>();
      require(role == "human" || role == "bot", ErrorKind::parse, "bad role: " + role);
      r.turns.push_back({role == "human" ? Role::human : Role::bot, t.at("text").get<std::string>()});
    }
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("conversation record: ") + e.what());
  }
}

}  // namespace voxelbridge
