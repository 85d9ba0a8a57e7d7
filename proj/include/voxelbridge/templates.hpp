#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "voxelbridge/conversation.hpp"
#include "voxelbridge/error.hpp"

namespace voxelbridge {

inline const std::vector<std::string>& brief_instructions() {
  static const std::vector<std::string> t{
      "Describe the image concisely.",
      "Provide a brief description of the given image.",
      "Offer a succinct explanation of the picture presented.",
      "Summarize the visual content of the image.",
      "Provide a brief description of the image.",
      "Describe the image briefly.",
      "Summarize the image.",
      "Give a short and clear explanation of the subsequent image.",
      "Share a concise interpretation of the image provided.",
      "Present a compact description of the photo's key features.",
      "Relay a brief, clear account of the picture shown.",
      "Render a clear and concise summary of the photo.",
      "Write a terse but informative summary of the picture.",
      "Create a compact narrative representing the image presented.",
  };
  return t;
}

inline const std::vector<std::string>& detailed_instructions() {
  static const std::vector<std::string> t{
      "Describe the following image in detail.",
      "Provide a detailed description of the given image.",
      "Give an elaborate explanation of the image you see.",
      "Share a comprehensive rundown of the presented image.",
      "Offer a detailed description of the image.",
      "Describe the image in detail.",
      "Offer a thorough analysis of the image.",
      "Provide a detailed explanation of the subsequent image.",
      "Explain the various aspects of the image before you.",
      "Clarify the contents of the displayed image with great detail.",
      "Characterize the image using a well-detailed description.",
      "Break down the elements of the image in a detailed manner.",
      "Walk through the important details of the image.",
      "Portray the image with a rich, descriptive narrative.",
      "Narrate the contents of the image with precision.",
      "Analyze the image in a comprehensive and detailed manner.",
      "Illustrate the image through a descriptive explanation.",
      "Explain the image in detail.",
      "Examine the image closely and share its details.",
      "Write an exhaustive depiction of the given image.",
  };
  return t;
}

inline const std::vector<std::string>& recon_instructions() {
  static const std::vector<std::string> t{"Provide the corresponding Stable Diffusion prompts for the image."};
  return t;
}

inline constexpr std::string_view kObjectSlot = "<object>";

inline const std::vector<std::string>& localization_instructions() {
  static const std::vector<std::string> t{"Locating the concept of \"<object>\""};
  return t;
}

/// Instruction lists per task kind.
struct TemplateSet {
  std::map<TaskKind, std::vector<std::string>> by_kind;

  static TemplateSet standard() {
    TemplateSet s;
    s.by_kind[TaskKind::brief] = brief_instructions();
    s.by_kind[TaskKind::detailed] = detailed_instructions();
    s.by_kind[TaskKind::recon_prompt] = recon_instructions();
    s.by_kind[TaskKind::concept_loc] = localization_instructions();
    return s;
  }

  TemplateSet only(std::initializer_list<TaskKind> kinds) const {
    TemplateSet s;
    for (auto k : kinds)
      if (by_kind.count(k)) s.by_kind[k] = by_kind.at(k);
    return s;
  }
};

/// Replaces every `<object>` slot with `object`.
inline std::string fill_object(std::string_view tmpl, std::string_view object) {
  std::string out(tmpl);
  for (auto p = out.find(kObjectSlot); p != std::string::npos; p = out.find(kObjectSlot, p + object.size()))
    out.replace(p, kObjectSlot.size(), object);
  return out;
}

/// Inverse of the localization template: the text between the quotes after
/// the fixed prefix. A backslash escapes the next character.
inline std::optional<std::string> parse_localization(std::string_view instruction) {
  static constexpr std::string_view prefix = "Locating the concept of \"";
  auto s = instruction;
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  if (s.substr(0, prefix.size()) != prefix) return std::nullopt;
  s.remove_prefix(prefix.size());
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      out.push_back(s[++i]);
    } else if (s[i] == '"') {
      auto rest = s.substr(i + 1);
      while (!rest.empty() && (rest.front() == ' ' || rest.front() == '.' || rest.front() == '\n')) rest.remove_prefix(1);
      if (!rest.empty() || out.empty()) return std::nullopt;
      return out;
    } else {
      out.push_back(s[i]);
    }
  }
  return std::nullopt;
}

}  // namespace voxelbridge
