// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <optional>
#include <string>

namespace support {

// Sets RENERF_THREADS for the lifetime of the object.
class ScopedThreads {
 public:
  explicit ScopedThreads(int n) {
    if (const char* old = std::getenv("RENERF_THREADS")) previous_ = old;
    setenv("RENERF_THREADS", std::to_string(n).c_str(), 1);
  }
  ~ScopedThreads() {
    if (previous_)
      setenv("RENERF_THREADS", previous_->c_str(), 1);
    else
      unsetenv("RENERF_THREADS");
  }
  ScopedThreads(const ScopedThreads&) = delete;
  ScopedThreads& operator=(const ScopedThreads&) = delete;

 private:
  std::optional<std::string> previous_;
};

}  // namespace support
