#include <fmt/format.h>
#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <json.hpp>

#include "atom/guidance.hpp"

namespace atom {

namespace {

using K = GuidanceError::Kind;
using nlohmann::json;

json parse_line(const std::string& line) {
  auto j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw GuidanceError(K::protocol, fmt::format("guidance: malformed line '{}'", line.substr(0, 120)));
  if (!j.contains("type") || !j["type"].is_string()) throw GuidanceError(K::protocol, "guidance: message without a type");
  return j;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw GuidanceError(K::protocol, "base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(text.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw GuidanceError(K::protocol, "base64: invalid characters");
  // EVP_DecodeBlock keeps the bytes that padding stands for.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string encode_floats(std::span<const float> values) {
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  return base64_encode(bytes);
}

std::vector<float> decode_floats(std::string_view text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 4 != 0)
    throw GuidanceError(K::shape_mismatch, fmt::format("guidance: {} payload bytes is not whole floats", bytes.size()));
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

std::string encode_request_line(const GuidanceRequest& r) {
  json j{{"type", "guide"},
         {"prompt", r.prompt},
         {"stage", r.stage},
         {"width", r.width},
         {"height", r.height},
         {"guidance_scale", r.guidance_scale},
         {"noise_lo", r.noise_lo},
         {"noise_hi", r.noise_hi},
         {"pixels", encode_floats(r.pixels)}};
  return j.dump();
}

RemoteGuidance::RemoteGuidance(std::unique_ptr<LineTransport> transport, std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout) {
  transport_->send_line(json{{"type", "hello"}, {"version", kProtocolVersion}}.dump());
  const auto reply = parse_line(transport_->recv_line(timeout_));
  if (reply["type"] == "error")
    throw GuidanceError(K::service, fmt::format("guidance service: {}", reply.value("message", "(no message)")));
  if (reply["type"] != "hello_ack") throw GuidanceError(K::protocol, "guidance: expected hello_ack");
  if (!reply.contains("version") || !reply["version"].is_number_integer() || reply["version"] != kProtocolVersion)
    throw GuidanceError(K::protocol, fmt::format("guidance: protocol version mismatch (client {}, service {})",
                                                 kProtocolVersion, reply.value("version", json()).dump()));
}

GuidanceResponse RemoteGuidance::guide(const GuidanceRequest& request) {
  validate_request(request);
  transport_->send_line(encode_request_line(request));
  const auto reply = parse_line(transport_->recv_line(timeout_));
  if (reply["type"] == "error")
    throw GuidanceError(K::service, fmt::format("guidance service: {}", reply.value("message", "(no message)")));
  if (reply["type"] != "grad") throw GuidanceError(K::protocol, fmt::format("guidance: unexpected reply type {}", reply["type"].dump()));
  if (!reply.contains("pixels") || !reply["pixels"].is_string()) throw GuidanceError(K::protocol, "guidance: grad without pixels");
  GuidanceResponse out;
  out.grad = decode_floats(reply["pixels"].get<std::string>());
  if (out.grad.size() != request.pixels.size())
    throw GuidanceError(K::shape_mismatch, fmt::format("guidance: {} gradient values for {} pixels values", out.grad.size(),
                                                       request.pixels.size()));
  for (float g : out.grad)
    if (!std::isfinite(g)) throw GuidanceError(K::protocol, "guidance: non-finite gradient value");
  if (reply.contains("loss") && reply["loss"].is_number()) out.loss = reply["loss"].get<double>();
  return out;
}

GuidanceAddress parse_guidance_address(const std::string& text) {
  GuidanceAddress a;
  if (text.empty() || text == "oracle") return a;
  if (text.rfind("stdio:", 0) == 0) {
    a.mode = GuidanceAddress::Mode::stdio;
    a.command = text.substr(6);
    if (a.command.empty()) throw std::invalid_argument("guidance address: empty stdio command");
    return a;
  }
  std::string rest = text.rfind("tcp:", 0) == 0 ? text.substr(4) : text;
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0)
    throw std::invalid_argument(fmt::format("guidance address '{}': expected oracle, HOST:PORT or stdio:COMMAND", text));
  const auto port_text = rest.substr(colon + 1);
  char* end = nullptr;
  const long port = std::strtol(port_text.c_str(), &end, 10);
  if (port_text.empty() || *end != '\0' || port < 1 || port > 65535)
    throw std::invalid_argument(fmt::format("guidance address '{}': bad port", text));
  a.mode = GuidanceAddress::Mode::tcp;
  a.host = rest.substr(0, colon);
  a.port = static_cast<std::uint16_t>(port);
  return a;
}

std::string effective_guidance_address(const std::string& configured) {
  const char* env = std::getenv("ATOM_GUIDANCE_ADDR");
  return env && *env ? std::string(env) : configured;
}

std::unique_ptr<Guidance> make_remote_guidance(const GuidanceAddress& address, std::chrono::milliseconds timeout) {
  switch (address.mode) {
    case GuidanceAddress::Mode::tcp:
      return std::make_unique<RemoteGuidance>(connect_tcp(address.host, address.port, timeout), timeout);
    case GuidanceAddress::Mode::stdio:
      return std::make_unique<RemoteGuidance>(spawn_stdio(address.command), timeout);
    case GuidanceAddress::Mode::oracle:
      break;
  }
  throw std::invalid_argument("make_remote_guidance: the oracle is not a remote address");
}

}  // namespace atom
