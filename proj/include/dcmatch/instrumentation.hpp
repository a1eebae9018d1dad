#pragma once

#include <atomic>

namespace dcmatch::instrumentation {

// Process-wide call counters. Tests use them to check that inference runs a
// single encoder forward and never builds masked sub-sequences.
struct Counters {
  std::atomic<long> encoder_forwards{0};
  std::atomic<long> mask_calls{0};

  void reset() {
    encoder_forwards.store(0);
    mask_calls.store(0);
  }
};

inline Counters& counters() {
  static Counters c;
  return c;
}

}  // namespace dcmatch::instrumentation
