#include "evofcn/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iostream>

#include "evofcn/errors.hpp"

namespace evofcn {

namespace protocol {

nlohmann::json request_json(std::int64_t id, const EvalRequest& r) {
  return {{"type", "evaluate"},
          {"id", id},
          {"dim", to_string(r.dim)},
          {"budget_epochs", r.budget_epochs},
          {"fold", r.fold},
          {"seed", r.seed},
          {"genome", genome_to_json(r.genome)}};
}

nlohmann::json shutdown_json() { return {{"type", "shutdown"}}; }

}  // namespace protocol

namespace {

using Clock = std::chrono::steady_clock;

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

// Reads one line from fd into `line`, using `buffer` for leftovers. Returns
// false on EOF; throws EvaluationError on timeout.
bool read_line(int fd, std::string& buffer, std::string& line, Clock::time_point deadline) {
  for (;;) {
    if (auto nl = buffer.find('\n'); nl != std::string::npos) {
      line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      return true;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) throw EvaluationError("timed out waiting for worker handshake");
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw EvaluationError(std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) continue;
    char chunk[4096];
    const ssize_t n = ::read(fd, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EvaluationError(std::string("read failed: ") + std::strerror(errno));
    }
    if (n == 0) return false;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

void reap(int pid) {
  if (pid <= 0) return;
  for (int i = 0; i < 500; ++i) {
    if (::waitpid(pid, nullptr, WNOHANG) == pid) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ::kill(-pid, SIGKILL);
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
}

}  // namespace

WorkerConnection::WorkerConnection(const std::string& command,
                                   std::chrono::milliseconds handshake_timeout) {
  ignore_sigpipe();
  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw EvaluationError("pipe() failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw EvaluationError("pipe() failed");
  }
  const std::string shell_cmd = "exec " + command;
  pid_ = ::fork();
  if (pid_ < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    throw EvaluationError("fork() failed");
  }
  if (pid_ == 0) {
    ::setpgid(0, 0);
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", shell_cmd.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  to_worker_ = to_child[1];
  from_worker_ = from_child[0];

  auto abort_launch = [&](const std::string& why, const std::string& raw = {}) {
    ::close(to_worker_);
    ::kill(-pid_, SIGTERM);
    reap(pid_);
    ::close(from_worker_);
    if (!raw.empty()) throw ProtocolError(why, raw);
    throw EvaluationError(why);
  };

  std::string line;
  bool got = false;
  try {
    got = read_line(from_worker_, read_buffer_, line, Clock::now() + handshake_timeout);
  } catch (const EvaluationError& e) {
    abort_launch(std::string(e.what()) + " (command: " + command + ")");
  }
  if (!got) abort_launch("worker exited before handshake (command: " + command + ")");

  nlohmann::json hello;
  try {
    hello = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    abort_launch("malformed handshake", line);
  }
  if (!hello.is_object() || hello.value("type", "") != "hello")
    abort_launch("expected hello message", line);
  if (!hello.contains("protocol") || !hello["protocol"].is_number_integer() ||
      hello["protocol"].get<int>() != protocol::kVersion)
    abort_launch("unsupported protocol version", line);
  if (!hello.contains("concurrent") || !hello["concurrent"].is_boolean())
    abort_launch("hello lacks boolean 'concurrent'", line);
  concurrent_ = hello["concurrent"].get<bool>();

  reader_ = std::thread([this] { reader_loop(); });
}

WorkerConnection::~WorkerConnection() {
  try {
    if (alive_) write_line(protocol::shutdown_json().dump() + "\n");
  } catch (const std::exception&) {
  }
  ::close(to_worker_);
  reap(pid_);
  stopping_ = true;
  if (reader_.joinable()) reader_.join();
  ::close(from_worker_);
}

void WorkerConnection::write_line(const std::string& line) {
  std::lock_guard lock(write_mu_);
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::write(to_worker_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EvaluationError(std::string("write to worker failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

void WorkerConnection::fail_all(const std::exception_ptr& e) {
  std::lock_guard lock(mu_);
  for (auto& [id, promise] : pending_) promise.set_exception(e);
  pending_.clear();
}

void WorkerConnection::reader_loop() {
  for (;;) {
    pollfd p{from_worker_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 100);
    if (rc < 0 && errno != EINTR) break;
    if (rc <= 0) {
      if (stopping_) break;
      continue;
    }
    char chunk[4096];
    const ssize_t n = ::read(from_worker_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (n == 0) break;
    read_buffer_.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = read_buffer_.find('\n')) != std::string::npos) {
      std::string line = read_buffer_.substr(0, nl);
      read_buffer_.erase(0, nl + 1);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      handle_line(line);
    }
  }
  alive_ = false;
  std::exception_ptr e;
  {
    std::lock_guard lock(mu_);
    e = broken_;
  }
  fail_all(e ? e : std::make_exception_ptr(EvaluationError("worker process exited")));
}

void WorkerConnection::handle_line(const std::string& line) {
  auto break_connection = [&](const std::string& why) {
    auto e = std::make_exception_ptr(ProtocolError(why, line));
    {
      std::lock_guard lock(mu_);
      if (!broken_) broken_ = e;
    }
    alive_ = false;
    fail_all(e);
  };

  nlohmann::json msg;
  try {
    msg = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    return break_connection("malformed response");
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
    return break_connection("response lacks a string 'type'");
  const std::string type = msg["type"].get<std::string>();
  if (type != "result" && type != "error") return break_connection("unexpected message type");
  if (!msg.contains("id") || !msg["id"].is_number_integer())
    return break_connection("response lacks an integer 'id'");
  const auto id = msg["id"].get<std::int64_t>();

  std::promise<EvalResult> promise;
  bool known = false;
  {
    std::lock_guard lock(mu_);
    auto it = pending_.find(id);
    if (it != pending_.end()) {
      promise = std::move(it->second);
      pending_.erase(it);
      known = true;
    } else if (abandoned_.erase(id)) {
      return;
    }
  }
  if (!known) return break_connection("response for unknown request id " + std::to_string(id));

  if (type == "error") {
    std::string message = msg.contains("message") && msg["message"].is_string()
                              ? msg["message"].get<std::string>()
                              : std::string("(no message)");
    promise.set_exception(std::make_exception_ptr(EvaluationError("worker error: " + message)));
    return;
  }
  try {
    EvalResult r;
    auto need = [&](const char* k, bool integer) -> const nlohmann::json& {
      if (!msg.contains(k)) throw ProtocolError(std::string("result lacks '") + k + "'", line);
      const auto& v = msg[k];
      if (integer ? !v.is_number_integer() : !v.is_number())
        throw ProtocolError(std::string("result field '") + k + "' has the wrong type", line);
      return v;
    };
    r.dsc_train = need("dsc_train", false).get<double>();
    r.dsc_val = need("dsc_val", false).get<double>();
    r.e_max = need("e_max", true).get<int>();
    r.param_count = need("param_count", true).get<std::int64_t>();
    promise.set_value(r);
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
}

EvalResult WorkerConnection::evaluate(const EvalRequest& r, std::chrono::milliseconds timeout) {
  std::future<EvalResult> fut;
  std::int64_t id;
  {
    std::lock_guard lock(mu_);
    if (broken_) std::rethrow_exception(broken_);
    if (!alive_) throw EvaluationError("worker process exited");
    id = next_id_++;
    fut = pending_[id].get_future();
  }
  try {
    write_line(protocol::request_json(id, r).dump() + "\n");
  } catch (...) {
    std::lock_guard lock(mu_);
    pending_.erase(id);
    throw;
  }
  if (fut.wait_for(timeout) == std::future_status::timeout) {
    std::lock_guard lock(mu_);
    if (pending_.erase(id)) {
      abandoned_.insert(id);
      throw EvaluationError("request " + std::to_string(id) + " timed out after " +
                            std::to_string(timeout.count()) + " ms");
    }
  }
  return fut.get();
}

SubprocessEvaluator::SubprocessEvaluator(const SubprocessOptions& options) : options_(options) {
  if (options.workers < 1) throw ValidationError("worker count must be >= 1");
  if (options.command.empty()) throw ValidationError("worker command is empty");
  for (int i = 0; i < options.workers; ++i)
    workers_.push_back(std::make_unique<WorkerConnection>(options.command, options.handshake_timeout));
  in_flight_.assign(workers_.size(), 0);
}

bool SubprocessEvaluator::concurrent() const {
  if (workers_.size() > 1) return true;
  return workers_.front()->concurrent();
}

EvalResult SubprocessEvaluator::evaluate(const EvalRequest& request) {
  std::size_t slot = 0;
  {
    std::unique_lock lock(mu_);
    for (;;) {
      bool any_alive = false;
      int best = -1;
      for (std::size_t i = 0; i < workers_.size(); ++i) {
        if (!workers_[i]->alive()) continue;
        any_alive = true;
        if (!workers_[i]->concurrent() && in_flight_[i] > 0) continue;
        if (best < 0 || in_flight_[i] < in_flight_[best]) best = static_cast<int>(i);
      }
      if (!any_alive) throw EvaluationError("no live evaluator workers");
      if (best >= 0) {
        slot = static_cast<std::size_t>(best);
        break;
      }
      cv_.wait_for(lock, std::chrono::milliseconds(200));
    }
    ++in_flight_[slot];
  }
  auto release = [&] {
    std::lock_guard lock(mu_);
    --in_flight_[slot];
    cv_.notify_all();
  };
  try {
    EvalResult r = workers_[slot]->evaluate(request, options_.request_timeout);
    release();
    return r;
  } catch (...) {
    release();
    throw;
  }
}

}  // namespace evofcn
