#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "evofcn/evaluator.hpp"

namespace evofcn {

// Wire format of the newline-delimited JSON evaluator protocol.
namespace protocol {
constexpr int kVersion = 1;
nlohmann::json request_json(std::int64_t id, const EvalRequest& r);
nlohmann::json shutdown_json();
}  // namespace protocol

// One worker process speaking the protocol on its stdin/stdout. Requests may be
// pipelined; responses are matched to requests by id in whatever order they
// arrive.
class WorkerConnection {
 public:
  WorkerConnection(const std::string& command, std::chrono::milliseconds handshake_timeout);
  ~WorkerConnection();

  WorkerConnection(const WorkerConnection&) = delete;
  WorkerConnection& operator=(const WorkerConnection&) = delete;

  // Blocks until the matching response arrives, the timeout expires, or the
  // worker dies. Throws EvaluationError (ProtocolError for wire violations).
  EvalResult evaluate(const EvalRequest& r, std::chrono::milliseconds timeout);

  bool concurrent() const { return concurrent_; }
  bool alive() const { return alive_.load(); }
  int pid() const { return pid_; }

 private:
  void reader_loop();
  void handle_line(const std::string& line);
  void fail_all(const std::exception_ptr& e);
  void write_line(const std::string& line);

  int pid_ = -1;
  int to_worker_ = -1;
  int from_worker_ = -1;
  bool concurrent_ = false;
  std::atomic<bool> alive_{true};
  std::atomic<bool> stopping_{false};
  std::string read_buffer_;

  std::mutex write_mu_;
  std::mutex mu_;
  std::int64_t next_id_ = 1;
  std::map<std::int64_t, std::promise<EvalResult>> pending_;
  std::set<std::int64_t> abandoned_;  // timed out; late replies are dropped
  std::exception_ptr broken_;
  std::thread reader_;
};

struct SubprocessOptions {
  std::string command;
  int workers = 1;
  std::chrono::milliseconds request_timeout = std::chrono::seconds(3600);
  std::chrono::milliseconds handshake_timeout = std::chrono::seconds(60);
};

// A pool of K worker processes behind the Evaluator contract. Serial workers
// get at most one request at a time; concurrent workers accept any number.
class SubprocessEvaluator final : public Evaluator {
 public:
  explicit SubprocessEvaluator(const SubprocessOptions& options);

  EvalResult evaluate(const EvalRequest& request) override;
  bool concurrent() const override;

  std::size_t worker_count() const { return workers_.size(); }

 private:
  SubprocessOptions options_;
  std::vector<std::unique_ptr<WorkerConnection>> workers_;
  std::vector<int> in_flight_;
  std::mutex mu_;
  std::condition_variable cv_;
};

}  // namespace evofcn
