#pragma once

// Image -> pixel-gradient training signal: a photometric oracle against stored
// target views, and a client for an external guidance service speaking
// newline-delimited JSON over TCP or a child process's stdio.

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace atom {

class GuidanceError : public std::runtime_error {
 public:
  enum class Kind { invalid_request, unknown_target, timeout, shape_mismatch, service, protocol, io };
  GuidanceError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct GuidanceRequest {
  std::string prompt;  // directional suffix already applied
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major RGB, values in [0, 1]
  int stage = 1;
  double noise_lo = 0.02;
  double noise_hi = 0.98;
  double guidance_scale = 20.0;
  // Oracle lookup only; never sent over the wire.
  std::string target_prompt;
  int target_view = -1;
};

struct GuidanceResponse {
  std::vector<float> grad;  // d loss / d pixel, same layout as the request
  std::optional<double> loss;
};

// Throws GuidanceError(invalid_request) on bad shapes, stage, noise range or
// pixel values.
void validate_request(const GuidanceRequest& request);

// loss = mean((image - target)^2) over all H * W * 3 entries, grad its exact
// gradient 2 (image - target) / (3 H W).
GuidanceResponse photometric_guidance(const GuidanceRequest& request, std::span<const float> target);

class Guidance {
 public:
  virtual ~Guidance() = default;
  virtual GuidanceResponse guide(const GuidanceRequest& request) = 0;
};

// Source of target views for the photometric oracle.
class TargetViews {
 public:
  virtual ~TargetViews() = default;
  // nullptr when there is no view for that prompt and bucket.
  virtual const std::vector<float>* find(const std::string& prompt, int view, int width, int height) const = 0;
};

class PhotometricGuidance : public Guidance {
 public:
  explicit PhotometricGuidance(const TargetViews& targets) : targets_(targets) {}
  GuidanceResponse guide(const GuidanceRequest& request) override;

 private:
  const TargetViews& targets_;
};

// Wire encoding.
inline constexpr int kProtocolVersion = 1;
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);  // throws GuidanceError(protocol)
std::string encode_floats(std::span<const float> values);       // little-endian f32, base64
std::vector<float> decode_floats(std::string_view text);
std::string encode_request_line(const GuidanceRequest& request);  // one JSON object, no newline

// A bidirectional line channel.
class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void send_line(const std::string& line) = 0;
  // Throws GuidanceError(timeout) when no full line arrives in time.
  virtual std::string recv_line(std::chrono::milliseconds timeout) = 0;
};

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, std::uint16_t port,
                                           std::chrono::milliseconds timeout);
// Spawns `/bin/sh -c command` and talks to its stdin/stdout.
std::unique_ptr<LineTransport> spawn_stdio(const std::string& command);

class RemoteGuidance : public Guidance {
 public:
  // Performs the handshake; throws GuidanceError on version mismatch or timeout.
  RemoteGuidance(std::unique_ptr<LineTransport> transport, std::chrono::milliseconds timeout);
  GuidanceResponse guide(const GuidanceRequest& request) override;

 private:
  std::unique_ptr<LineTransport> transport_;
  std::chrono::milliseconds timeout_;
};

// "oracle", "tcp:HOST:PORT", "HOST:PORT" or "stdio:COMMAND".
struct GuidanceAddress {
  enum class Mode { oracle, tcp, stdio } mode = Mode::oracle;
  std::string host;
  std::uint16_t port = 0;
  std::string command;
};
GuidanceAddress parse_guidance_address(const std::string& text);  // throws std::invalid_argument
// The ATOM_GUIDANCE_ADDR environment variable, when set, replaces `configured`.
std::string effective_guidance_address(const std::string& configured);

std::unique_ptr<Guidance> make_remote_guidance(const GuidanceAddress& address, std::chrono::milliseconds timeout);

}  // namespace atom
