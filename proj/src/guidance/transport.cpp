#include <fcntl.h>
#include <fmt/format.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <boost/asio.hpp>
#include <cerrno>
#include <cstring>

#include "atom/guidance.hpp"

namespace atom {

namespace {

using K = GuidanceError::Kind;
namespace asio = boost::asio;
using asio::ip::tcp;

// After a timeout the stream position is unknown, so the transport refuses
// further use.
class TcpTransport : public LineTransport {
 public:
  TcpTransport(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) : socket_(io_) {
    boost::system::error_code ec;
    tcp::resolver resolver(io_);
    const auto endpoints = resolver.resolve(host, std::to_string(port), ec);
    if (ec) throw GuidanceError(K::io, fmt::format("guidance: cannot resolve {}: {}", host, ec.message()));
    bool done = false;
    asio::async_connect(socket_, endpoints, [&](const boost::system::error_code& e, const tcp::endpoint&) {
      ec = e;
      done = true;
    });
    run(timeout, done);
    if (!done) throw GuidanceError(K::timeout, fmt::format("guidance: connecting to {}:{} timed out", host, port));
    if (ec) throw GuidanceError(K::io, fmt::format("guidance: cannot connect to {}:{}: {}", host, port, ec.message()));
  }

  void send_line(const std::string& line) override {
    if (broken_) throw GuidanceError(K::io, "guidance: connection unusable after an earlier timeout");
    boost::system::error_code ec;
    asio::write(socket_, asio::buffer(line + "\n"), ec);
    if (ec) throw GuidanceError(K::io, fmt::format("guidance: send failed: {}", ec.message()));
  }

  std::string recv_line(std::chrono::milliseconds timeout) override {
    if (broken_) throw GuidanceError(K::io, "guidance: connection unusable after an earlier timeout");
    boost::system::error_code ec;
    bool done = false;
    asio::async_read_until(socket_, buffer_, '\n', [&](const boost::system::error_code& e, std::size_t) {
      ec = e;
      done = true;
    });
    run(timeout, done);
    if (!done) {
      broken_ = true;
      throw GuidanceError(K::timeout, fmt::format("guidance: no reply within {} ms", timeout.count()));
    }
    if (ec) throw GuidanceError(K::io, fmt::format("guidance: receive failed: {}", ec.message()));
    std::istream in(&buffer_);
    std::string line;
    std::getline(in, line);
    return line;
  }

 private:
  void run(std::chrono::milliseconds timeout, bool& done) {
    io_.restart();
    io_.run_for(timeout);
    if (!done) {
      boost::system::error_code ignored;
      socket_.cancel(ignored);
      socket_.close(ignored);
      io_.restart();
      io_.run();  // let the cancelled handler finish
      done = false;
    }
  }

  asio::io_context io_;
  tcp::socket socket_;
  asio::streambuf buffer_;
  bool broken_ = false;
};

class StdioTransport : public LineTransport {
 public:
  explicit StdioTransport(const std::string& command) {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw GuidanceError(K::io, fmt::format("guidance: pipe failed: {}", std::strerror(errno)));
    pid_ = fork();
    if (pid_ < 0) throw GuidanceError(K::io, fmt::format("guidance: fork failed: {}", std::strerror(errno)));
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
    // A dead child must surface as EPIPE, not kill the trainer.
    signal(SIGPIPE, SIG_IGN);
  }

  ~StdioTransport() override {
    close(write_fd_);
    close(read_fd_);
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) return;
      usleep(10000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
  }

  void send_line(const std::string& line) override {
    const std::string data = line + "\n";
    std::size_t sent = 0;
    while (sent < data.size()) {
      const auto n = write(write_fd_, data.data() + sent, data.size() - sent);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw GuidanceError(K::io, fmt::format("guidance: write to service failed: {}", std::strerror(errno)));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::string recv_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      const auto nl = pending_.find('\n');
      if (nl != std::string::npos) {
        auto line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw GuidanceError(K::timeout, fmt::format("guidance: no reply within {} ms", timeout.count()));
      pollfd p{read_fd_, POLLIN, 0};
      const int r = poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw GuidanceError(K::io, fmt::format("guidance: poll failed: {}", std::strerror(errno)));
      if (r == 0) continue;
      char chunk[65536];
      const auto n = read(read_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw GuidanceError(K::io, "guidance: service closed its output");
      pending_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string pending_;
};

}  // namespace

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, std::uint16_t port,
                                           std::chrono::milliseconds timeout) {
  return std::make_unique<TcpTransport>(host, port, timeout);
}

std::unique_ptr<LineTransport> spawn_stdio(const std::string& command) {
  return std::make_unique<StdioTransport>(command);
}

}  // namespace atom
