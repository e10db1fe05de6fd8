// Plugin executable wrapping the builtin linear learner. Used to check that
// the external-backend path reproduces native curves exactly.

#include <iostream>

#include "alsim/plugin.hpp"

int main() {
  std::ios::sync_with_stdio(false);
  alsim::BuiltinPluginServer server;
  return alsim::serve_plugin(std::cin, std::cout, server);
}
