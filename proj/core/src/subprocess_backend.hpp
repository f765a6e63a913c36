#pragma once

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "causex/classifier.hpp"

namespace causex::detail {

std::string shell_quote(const std::string& text);

std::string base64_encode(const std::uint8_t* data, std::size_t size);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Child process running `/bin/sh -c command` with stdin/stdout/stderr wired
// to this process. Killed and reaped on destruction.
class ChildProcess {
 public:
  explicit ChildProcess(const std::string& command);
  ~ChildProcess();

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  int stdin_fd() const { return stdin_fd_; }
  int stdout_fd() const { return stdout_fd_; }
  int stderr_fd() const { return stderr_fd_; }

  // Non-blocking check; returns a description once the child has exited.
  std::string exit_description();

 private:
  pid_t pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  int stderr_fd_ = -1;
  bool reaped_ = false;
  int status_ = 0;
};

// Newline-delimited JSON model server:
//   request  {"id": u64, "shape": [H, W, C], "data_b64": <LE float32, row-major>}
//   response {"id": u64, "label": u32, "confidences": [f32, ...]}
// Responses may come back in any order and are matched by id. One child serves
// all calls; concurrent batches are serialized.
class SubprocessClassifier final : public Classifier {
 public:
  SubprocessClassifier(const ClassifierSpec& spec, std::string command,
                       std::chrono::seconds timeout = std::chrono::seconds(600));
  ~SubprocessClassifier() override;

 protected:
  std::vector<RawScores> evaluate(std::span<const ImageTensor> normalized) const override;

 private:
  std::vector<RawScores> exchange(std::span<const ImageTensor> normalized) const;
  [[noreturn]] void fail(const std::string& what) const;

  std::string command_;
  std::chrono::seconds timeout_;
  mutable std::mutex mutex_;
  mutable std::unique_ptr<ChildProcess> child_;
  mutable std::uint64_t next_id_ = 1;
  mutable std::string stderr_tail_;
};

}  // namespace causex::detail
