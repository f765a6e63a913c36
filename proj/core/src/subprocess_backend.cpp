#include "subprocess_backend.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "causex/error.hpp"

extern char** environ;

namespace causex::detail {

namespace {

static_assert(std::endian::native == std::endian::little,
              "wire format is little-endian float32");

constexpr std::size_t kStderrTailBytes = 4096;

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

}  // namespace

std::string shell_quote(const std::string& text) {
  std::string out = "'";
  for (char c : text) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

std::string base64_encode(const std::uint8_t* data, std::size_t size) {
  std::string out(4 * ((size + 2) / 3), '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data,
                                      static_cast<int>(size));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int written = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                      static_cast<int>(text.size()));
  if (written < 0) throw ProtocolError("invalid base64");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(written) - padding);
  return out;
}

ChildProcess::ChildProcess(const std::string& command) {
  int in_pair[2];
  int out_pipe[2];
  int err_pipe[2];
  // stdin is a socket so writes can use MSG_NOSIGNAL instead of raising SIGPIPE.
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_pair) != 0 ||
      ::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw BackendError(std::string("cannot create pipes: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pair[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);

  std::string sh = "/bin/sh";
  std::string dash_c = "-c";
  std::string cmd = command;
  char* argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};
  const int rc = ::posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pair[1]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  stdin_fd_ = in_pair[0];
  stdout_fd_ = out_pipe[0];
  stderr_fd_ = err_pipe[0];
  if (rc != 0) {
    close_fd(stdin_fd_);
    close_fd(stdout_fd_);
    close_fd(stderr_fd_);
    throw BackendError("cannot spawn '" + command + "': " + std::strerror(rc));
  }
  set_nonblocking(stdin_fd_);
  set_nonblocking(stdout_fd_);
  set_nonblocking(stderr_fd_);
}

ChildProcess::~ChildProcess() {
  close_fd(stdin_fd_);
  if (!reaped_ && pid_ > 0) {
    // Closed stdin is the shutdown signal; give the server a moment, then kill.
    for (int i = 0; i < 50 && !reaped_; ++i) {
      if (::waitpid(pid_, &status_, WNOHANG) == pid_) {
        reaped_ = true;
      } else {
        ::usleep(10'000);
      }
    }
    if (!reaped_) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status_, 0);
    }
  }
  close_fd(stdout_fd_);
  close_fd(stderr_fd_);
}

std::string ChildProcess::exit_description() {
  if (!reaped_ && pid_ > 0 && ::waitpid(pid_, &status_, WNOHANG) == pid_) reaped_ = true;
  if (!reaped_) return {};
  if (WIFEXITED(status_)) return "exited with status " + std::to_string(WEXITSTATUS(status_));
  if (WIFSIGNALED(status_)) return "killed by signal " + std::to_string(WTERMSIG(status_));
  return "terminated";
}

SubprocessClassifier::SubprocessClassifier(const ClassifierSpec& spec, std::string command,
                                           std::chrono::seconds timeout)
    : Classifier(spec), command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) throw InputError("subprocess backend needs a command");
}

SubprocessClassifier::~SubprocessClassifier() = default;

void SubprocessClassifier::fail(const std::string& what) const {
  std::string message = "model process '" + command_ + "' " + what;
  if (child_) {
    // Collect what the child printed on its way out; stdout EOF can win the
    // poll race against the last stderr write.
    char buffer[4096];
    for (int attempt = 0; attempt < 20; ++attempt) {
      pollfd fd{child_->stderr_fd(), POLLIN, 0};
      if (::poll(&fd, 1, 10) <= 0) break;
      const ssize_t n = ::read(child_->stderr_fd(), buffer, sizeof buffer);
      if (n <= 0) break;
      stderr_tail_.append(buffer, static_cast<std::size_t>(n));
    }
    if (stderr_tail_.size() > kStderrTailBytes) {
      stderr_tail_.erase(0, stderr_tail_.size() - kStderrTailBytes);
    }
    if (auto exit = child_->exit_description(); !exit.empty()) message += " (" + exit + ")";
  }
  if (!stderr_tail_.empty()) message += "; stderr: " + stderr_tail_;
  child_.reset();
  throw BackendError(message);
}

std::vector<Classifier::RawScores> SubprocessClassifier::evaluate(
    std::span<const ImageTensor> normalized) const {
  std::lock_guard lock(mutex_);
  if (!child_) {
    stderr_tail_.clear();
    child_ = std::make_unique<ChildProcess>(command_);
  }
  return exchange(normalized);
}

std::vector<Classifier::RawScores> SubprocessClassifier::exchange(
    std::span<const ImageTensor> normalized) const {
  std::string outgoing;
  std::unordered_map<std::uint64_t, std::size_t> pending;
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    const auto& image = normalized[i];
    const auto data = image.data();
    nlohmann::json request = {
        {"id", next_id_},
        {"shape", {image.height(), image.width(), image.channels()}},
        {"data_b64", base64_encode(reinterpret_cast<const std::uint8_t*>(data.data()),
                                   data.size_bytes())}};
    outgoing += request.dump();
    outgoing += '\n';
    pending.emplace(next_id_++, i);
  }

  std::vector<RawScores> results(normalized.size());
  std::size_t written = 0;
  std::string incoming;
  const auto deadline = std::chrono::steady_clock::now() + timeout_;

  auto handle_line = [&](const std::string& line) {
    if (line.empty()) return;
    nlohmann::json response;
    try {
      response = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      child_.reset();
      throw ProtocolError("malformed response line: " + std::string(e.what()));
    }
    try {
      const auto id = response.at("id").get<std::uint64_t>();
      const auto it = pending.find(id);
      if (it == pending.end()) throw ProtocolError("response for unknown id " + std::to_string(id));
      RawScores raw;
      for (const auto& v : response.at("confidences")) {
        if (!v.is_number()) throw ProtocolError("non-numeric confidence in response");
        raw.scores.push_back(v.get<double>());
      }
      raw.reported_label = response.at("label").get<std::int64_t>();
      results[it->second] = std::move(raw);
      pending.erase(it);
    } catch (const nlohmann::json::exception& e) {
      child_.reset();
      throw ProtocolError("bad response: " + std::string(e.what()));
    } catch (const ProtocolError&) {
      child_.reset();
      throw;
    }
  };

  char buffer[65536];
  while (!pending.empty()) {
    pollfd fds[3] = {
        {child_->stdout_fd(), POLLIN, 0},
        {child_->stderr_fd(), POLLIN, 0},
        {written < outgoing.size() ? child_->stdin_fd() : -1, POLLOUT, 0},
    };
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) fail("timed out");
    const int ready = ::poll(fds, 3, static_cast<int>(std::min<long long>(remaining.count(), 1000)));
    if (ready < 0) {
      if (errno == EINTR) continue;
      fail(std::string("poll failed: ") + std::strerror(errno));
    }
    if (fds[1].revents & (POLLIN | POLLHUP)) {
      const ssize_t n = ::read(child_->stderr_fd(), buffer, sizeof buffer);
      if (n > 0) {
        stderr_tail_.append(buffer, static_cast<std::size_t>(n));
        if (stderr_tail_.size() > kStderrTailBytes) {
          stderr_tail_.erase(0, stderr_tail_.size() - kStderrTailBytes);
        }
      }
    }
    if (fds[2].revents & (POLLERR | POLLHUP)) fail("closed its input");
    if (fds[2].revents & POLLOUT) {
      const ssize_t n = ::send(child_->stdin_fd(), outgoing.data() + written,
                               outgoing.size() - written, MSG_NOSIGNAL);
      if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
        fail(std::string("write failed: ") + std::strerror(errno));
      }
      if (n > 0) written += static_cast<std::size_t>(n);
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t n = ::read(child_->stdout_fd(), buffer, sizeof buffer);
      if (n == 0) fail("exited before answering all requests");
      if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
        fail(std::string("read failed: ") + std::strerror(errno));
      }
      if (n > 0) {
        incoming.append(buffer, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (std::size_t nl; (nl = incoming.find('\n', start)) != std::string::npos;
             start = nl + 1) {
          handle_line(incoming.substr(start, nl - start));
        }
        incoming.erase(0, start);
      }
    }
  }
  return results;
}

}  // namespace causex::detail
