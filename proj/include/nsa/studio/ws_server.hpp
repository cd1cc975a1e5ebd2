#pragma once

// WebSocket transport for studio sessions: one session per connection,
// JSON requests and replies as text frames, positions as binary frames.
// Consecutive binary frames are coalesced so a slow client skips stale ones.

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/strand.hpp>
#include <boost/asio/thread_pool.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <cstdint>
#include <deque>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "nsa/studio/session.hpp"

namespace nsa::studio {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  explicit Connection(tcp::socket socket) : ws_(std::move(socket)) {}

  void run() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(256u << 20);
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] {
      self->ws_.async_accept([self](beast::error_code ec) {
        if (ec) return;
        self->open();
      });
    });
  }

 private:
  struct Outgoing {
    bool text;
    std::string payload;
  };

  void open() {
    std::weak_ptr<Connection> weak = shared_from_this();
    Sink sink;
    sink.text = [weak](std::string s) {
      if (auto self = weak.lock())
        net::post(self->ws_.get_executor(), [self, s = std::move(s)]() mutable { self->push_text(std::move(s)); });
    };
    sink.binary = [weak](std::vector<std::uint8_t> b) {
      if (auto self = weak.lock())
        net::post(self->ws_.get_executor(), [self, b = std::move(b)]() mutable { self->push_binary(std::move(b)); });
    };
    session_ = std::make_shared<Session>(std::move(sink));
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      if (self->ws_.got_text()) {
        std::string text = beast::buffers_to_string(self->buffer_.data());
        self->buffer_.consume(self->buffer_.size());
        // Requests may block briefly (mesh upload, waiting for the current
        // iteration); they run off the socket strand.
        net::post(self->requests_, [session = self->session_, text = std::move(text)] { session->handle(text); });
      } else {
        self->buffer_.consume(self->buffer_.size());
      }
      self->read();
    });
  }

  void push_text(std::string s) {
    queue_.push_back({true, std::move(s)});
    write();
  }

  // Replaces a frame still waiting at the back of the queue, so frames are
  // coalesced without reordering them against text replies.
  void push_binary(std::vector<std::uint8_t> b) {
    std::string payload(b.begin(), b.end());
    if (!queue_.empty() && !queue_.back().text)
      queue_.back().payload = std::move(payload);
    else
      queue_.push_back({false, std::move(payload)});
    write();
  }

  void write() {
    if (writing_ || closed_) return;
    if (queue_.empty()) return;
    writing_ = true;
    current_ = std::move(queue_.front());
    queue_.pop_front();
    ws_.text(current_.text);
    ws_.async_write(net::buffer(current_.payload), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) return self->close();
      self->write();
    });
  }

  void close() {
    closed_ = true;
    // Teardown joins the session worker, so it runs after pending requests
    // and off the socket strand.
    if (session_) net::post(requests_, [session = std::move(session_)]() mutable { session.reset(); });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::shared_ptr<Session> session_;
  net::strand<net::thread_pool::executor_type> requests_{requestPool().get_executor()};
  std::deque<Outgoing> queue_;
  Outgoing current_;
  bool writing_ = false;
  bool closed_ = false;

  static net::thread_pool& requestPool() {
    static net::thread_pool pool(2);
    return pool;
  }
};

class Server {
 public:
  /// Binds to 127.0.0.1 unless `any_address`; port 0 picks a free port.
  Server(net::io_context& io, unsigned short port, bool any_address = false)
      : io_(io), acceptor_(net::make_strand(io)) {
    const tcp::endpoint ep(any_address ? net::ip::address_v4::any() : net::ip::address_v4::loopback(), port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen(net::socket_base::max_listen_connections);
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void start() { accept(); }

  void stop() {
    net::post(acceptor_.get_executor(), [this] {
      beast::error_code ec;
      acceptor_.close(ec);
    });
  }

 private:
  void accept() {
    acceptor_.async_accept(net::make_strand(io_), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<Connection>(std::move(socket))->run();
      accept();
    });
  }

  net::io_context& io_;
  tcp::acceptor acceptor_;
};

}  // namespace nsa::studio
