#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace walkv {

/// Thrown when an armed failpoint fires. Deliberately not a walkv::Error so
/// that ordinary error handling never swallows it.
class SimulatedCrash : public std::exception {
 public:
  explicit SimulatedCrash(std::string label) : label_(std::move(label)) {}
  const char* what() const noexcept override { return label_.c_str(); }
  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

/// Failpoint registry used to simulate a process kill at labeled points.
///
/// Every labeled point is counted. When the armed (label, nth hit) is reached
/// the injector enters the crashed state and throws SimulatedCrash; from then
/// on every file mutation routed through walkv::File also throws, so nothing
/// after the crash point reaches the filesystem.
class FaultInjector {
 public:
  void arm(std::string label, uint64_t nth_hit);
  void disarm();

  /// Counts the point; throws SimulatedCrash if it is the armed one.
  void hit(std::string_view label);

  /// Like hit(), but for write sites that can tear: returns true when the
  /// caller must write a prefix of its buffer and then call crash().
  bool hit_torn(std::string_view label);

  [[noreturn]] void crash(std::string_view label);
  void crash_now() { crashed_.store(true); }

  bool crashed() const { return crashed_.load(std::memory_order_acquire); }
  void check_alive() const {
    if (crashed()) throw SimulatedCrash("after-crash");
  }

  std::map<std::string, uint64_t> hit_counts() const;
  std::optional<std::string> fired_label() const;

 private:
  bool count_and_match(std::string_view label);

  mutable std::mutex mu_;
  std::map<std::string, uint64_t, std::less<>> counts_;
  std::string armed_label_;
  uint64_t armed_hit_ = 0;
  std::optional<std::string> fired_;
  std::atomic<bool> crashed_{false};
};

inline void fault_point(FaultInjector* f, std::string_view label) {
  if (f != nullptr) f->hit(label);
}

}  // namespace walkv
