// Studio service: WebSocket endpoint for interactive stylization sessions.

#include <CLI11.hpp>

#include <boost/asio/signal_set.hpp>

#include <algorithm>
#include <iostream>
#include <thread>
#include <vector>

#include "nsa/studio/ws_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Stylization studio WebSocket service"};
  unsigned short port = 7340;
  bool any = false;
  app.add_option("--port", port, "TCP port");
  app.add_flag("--any-address", any, "Listen on all interfaces instead of loopback");
  CLI11_PARSE(app, argc, argv);

  try {
    nsa::studio::net::io_context io;
    nsa::studio::Server server(io, port, any);
    server.start();
    nsa::studio::net::signal_set signals(io, SIGINT, SIGTERM);
    signals.async_wait([&](auto, int) { io.stop(); });
    std::cout << "listening on port " << server.port() << std::endl;

    const unsigned n = std::max(2u, std::thread::hardware_concurrency());
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < n; ++i) pool.emplace_back([&] { io.run(); });
    io.run();
    for (auto& t : pool) t.join();
  } catch (const std::exception& e) {
    std::cerr << "studio_server: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
