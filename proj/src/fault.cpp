#include "walkv/fault.hpp"

namespace walkv {

void FaultInjector::arm(std::string label, uint64_t nth_hit) {
  std::lock_guard lock(mu_);
  armed_label_ = std::move(label);
  armed_hit_ = nth_hit;
}

void FaultInjector::disarm() {
  std::lock_guard lock(mu_);
  armed_label_.clear();
  armed_hit_ = 0;
}

bool FaultInjector::count_and_match(std::string_view label) {
  std::lock_guard lock(mu_);
  if (crashed()) return true;
  auto it = counts_.find(label);
  if (it == counts_.end()) it = counts_.emplace(std::string(label), 0).first;
  const uint64_t n = ++it->second;
  if (armed_hit_ != 0 && n == armed_hit_ && label == armed_label_) {
    fired_ = std::string(label);
    crashed_.store(true, std::memory_order_release);
    return true;
  }
  return false;
}

void FaultInjector::hit(std::string_view label) {
  if (count_and_match(label)) throw SimulatedCrash(std::string(label));
}

bool FaultInjector::hit_torn(std::string_view label) {
  if (crashed()) throw SimulatedCrash(std::string(label));
  return count_and_match(label);
}

void FaultInjector::crash(std::string_view label) {
  crashed_.store(true, std::memory_order_release);
  throw SimulatedCrash(std::string(label));
}

std::map<std::string, uint64_t> FaultInjector::hit_counts() const {
  std::lock_guard lock(mu_);
  return {counts_.begin(), counts_.end()};
}

std::optional<std::string> FaultInjector::fired_label() const {
  std::lock_guard lock(mu_);
  return fired_;
}

}  // namespace walkv
