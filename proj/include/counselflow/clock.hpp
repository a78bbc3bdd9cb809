#pragma once

#include <atomic>
#include <chrono>

#include "counselflow/domain.hpp"

namespace counselflow {

class Clock {
public:
    virtual ~Clock() = default;
    virtual Instant now() = 0;
};

class SystemClock : public Clock {
public:
    Instant now() override {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    }
};

// Advances by a fixed step per reading; keeps offline runs byte-identical.
class LogicalClock : public Clock {
public:
    explicit LogicalClock(Instant origin = 1'700'000'000'000, Instant step = 1000)
        : next_(origin), step_(step) {}

    Instant now() override { return next_.fetch_add(step_); }
    // Moves the clock so the next reading is strictly after `t`.
    void advance_past(Instant t) {
        Instant cur = next_.load();
        while (cur <= t && !next_.compare_exchange_weak(cur, t + step_)) {
        }
    }

private:
    std::atomic<Instant> next_;
    Instant step_;
};

}  // namespace counselflow
