#pragma once

// Scripted stand-in for the external guidance service.

#include <json.hpp>
#include <optional>
#include <string>

#include "atom/guidance.hpp"

namespace mock {

enum class Mode { zero, echo, short_payload, bad_version, silent, error, garbage };

inline std::optional<Mode> parse_mode(const std::string& s) {
  if (s == "zero") return Mode::zero;
  if (s == "echo") return Mode::echo;
  if (s == "short") return Mode::short_payload;
  if (s == "bad_version") return Mode::bad_version;
  if (s == "silent") return Mode::silent;
  if (s == "error") return Mode::error;
  if (s == "garbage") return Mode::garbage;
  return std::nullopt;
}

// Reply to one request line; nullopt means stay silent.
inline std::optional<std::string> reply(const std::string& line, Mode mode) {
  using nlohmann::json;
  auto j = json::parse(line, nullptr, false);
  if (j.is_discarded()) return json{{"type", "error"}, {"message", "unparseable line"}}.dump();
  const auto type = j.value("type", "");
  if (type == "hello") return json{{"type", "hello_ack"}, {"version", mode == Mode::bad_version ? 2 : 1}}.dump();
  if (type != "guide") return json{{"type", "error"}, {"message", "unknown message type"}}.dump();
  const auto count = static_cast<std::size_t>(j["width"].get<int>() * j["height"].get<int>() * 3);
  switch (mode) {
    case Mode::zero:
    case Mode::bad_version:
      return json{{"type", "grad"}, {"pixels", atom::encode_floats(std::vector<float>(count, 0.0f))}, {"extra", 1}}.dump();
    case Mode::echo:
      return json{{"type", "grad"}, {"pixels", j["pixels"]}}.dump();
    case Mode::short_payload:
      return json{{"type", "grad"}, {"pixels", atom::encode_floats(std::vector<float>(count - 1, 0.0f))}}.dump();
    case Mode::silent:
      return std::nullopt;
    case Mode::error:
      return json{{"type", "error"}, {"message", "model exploded"}}.dump();
    case Mode::garbage:
      return std::string("{not json");
  }
  return std::nullopt;
}

}  // namespace mock
