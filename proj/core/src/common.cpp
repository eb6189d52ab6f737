#include "ssop/common.hpp"

#include <iostream>
#include <mutex>

namespace ssop {

namespace {
std::mutex g_warn_mutex;
WarningHandler g_handler;
}  // namespace

void set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(g_warn_mutex);
  g_handler = std::move(handler);
}

void warn(const std::string& message) {
  std::lock_guard lock(g_warn_mutex);
  if (g_handler) {
    g_handler(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace ssop
