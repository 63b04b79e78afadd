#pragma once

#include <stdexcept>
#include <string>

namespace etclip {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }
}  // namespace detail

}  // namespace etclip

#define ETCLIP_CHECK(cond, msg)                \
  do {                                         \
    if (!(cond)) ::etclip::detail::fail(msg);  \
  } while (0)
