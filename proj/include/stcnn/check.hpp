// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace stcnn {

// Thrown on contract violations (shape mismatches, bad configs, ...).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
[[noreturn]] inline void fail(const char* cond, const std::string& msg) {
  std::ostringstream os;
  os << "check failed (" << cond << ")";
  if (!msg.empty()) os << ": " << msg;
  throw Error(os.str());
}
}  // namespace detail

}  // namespace stcnn

#define STCNN_CHECK(cond, msg)                                   \
  do {                                                           \
    if (!(cond)) {                                               \
      std::ostringstream stcnn_check_os;                         \
      stcnn_check_os << msg;                                     \
      ::stcnn::detail::fail(#cond, stcnn_check_os.str());        \
    }                                                            \
  } while (0)
