#include <stdexcept>
#include <thread>

#include "diffcal/gateway.hpp"

namespace diffcal::llm {

void SteadyClock::sleep_until(time_point t) { std::this_thread::sleep_until(t); }

Clock::time_point VirtualClock::now() {
  std::lock_guard lock(mu_);
  return now_;
}

void VirtualClock::sleep_until(time_point t) {
  std::lock_guard lock(mu_);
  if (t > now_) now_ = t;
}

void VirtualClock::advance(std::chrono::nanoseconds d) {
  std::lock_guard lock(mu_);
  now_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(d);
}

RateLimiter::RateLimiter(int per_second, Clock& clock) : per_second_(per_second), clock_(clock) {
  if (per_second <= 0) throw std::invalid_argument("rate limit must be positive");
}

Clock::time_point RateLimiter::acquire() {
  std::unique_lock lock(mu_);
  const std::uint64_t ticket = next_ticket_++;
  cv_.wait(lock, [&] { return serving_ == ticket; });
  // Only the ticket holder runs below, so the window cannot change under it.
  const auto window = std::chrono::seconds(1);
  auto now = clock_.now();
  while (!recent_.empty() && recent_.front() + window <= now) recent_.pop_front();
  if (static_cast<int>(recent_.size()) >= per_second_) {
    const auto wake = recent_.front() + window;
    lock.unlock();
    clock_.sleep_until(wake);
    lock.lock();
    now = clock_.now();
    if (now < wake) now = wake;
    while (!recent_.empty() && recent_.front() + window <= now) recent_.pop_front();
  }
  recent_.push_back(now);
  ++serving_;
  cv_.notify_all();
  return now;
}

}  // namespace diffcal::llm
