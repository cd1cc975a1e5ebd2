#include <gtest/gtest.h>

#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "nsa/primitives.hpp"
#include "nsa/studio/session.hpp"
#include "nsa/studio/ws_server.hpp"
#include "test_util.hpp"

using namespace nsa;
using namespace nsa::studio;
using namespace std::chrono_literals;

namespace {

// Thread-safe record of everything a session sends, in order.
struct Recorder {
  struct Message {
    bool text;
    std::string json;
    std::vector<std::uint8_t> bytes;
  };

  Sink sink() {
    return {[this](std::string s) { push({true, std::move(s), {}}); },
            [this](std::vector<std::uint8_t> b) { push({false, {}, std::move(b)}); }};
  }

  void push(Message m) {
    {
      std::lock_guard lock(mutex);
      messages.push_back(std::move(m));
    }
    cv.notify_all();
  }

  std::vector<Message> snapshot() {
    std::lock_guard lock(mutex);
    return messages;
  }

  std::vector<json> texts() {
    std::vector<json> out;
    for (const auto& m : snapshot())
      if (m.text) out.push_back(json::parse(m.json));
    return out;
  }

  std::vector<Frame> frames() {
    std::vector<Frame> out;
    for (const auto& m : snapshot())
      if (!m.text) out.push_back(decode_frame(m.bytes));
    return out;
  }

  // Waits for a text message of the given type; returns it.
  json wait_for(const std::string& type, std::chrono::milliseconds timeout = 20s) {
    std::unique_lock lock(mutex);
    std::size_t seen = 0;
    json found;
    cv.wait_for(lock, timeout, [&] {
      for (; seen < messages.size(); ++seen) {
        if (!messages[seen].text) continue;
        json j = json::parse(messages[seen].json);
        if (j["type"] == type && !consumed.count(seen)) {
          consumed.insert(seen);
          found = j;
          return true;
        }
      }
      return false;
    });
    return found;
  }

  std::mutex mutex;
  std::condition_variable cv;
  std::vector<Message> messages;
  std::set<std::size_t> consumed;
};

std::string obj_text(const TriangleMesh& m) { return format_obj(m); }

TriangleMesh test_mesh() {
  TriangleMesh m = primitives::icosphere(2);
  m.V *= 2.0;
  m.V.col(1).array() += 3.0;
  return m;
}

std::string request(json j) { return j.dump(); }

Positions frame_positions(const Frame& f) {
  Positions P(static_cast<Eigen::Index>(f.positions.size() / 3), 3);
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (int c = 0; c < 3; ++c) P(i, c) = f.positions[3 * i + c];
  return P;
}

// Strips fields that legitimately differ between sessions.
json scrub(json j) {
  j.erase("sessionId");
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// frame format

TEST(FrameFormat, LittleEndianLayout) {
  Positions V(1, 3);
  V << 1.0, -2.0, 0.5;
  const auto bytes = encode_frame(0x01020304u, 1.0f, V);
  ASSERT_EQ(bytes.size(), 8u + 12u);
  EXPECT_EQ(bytes[0], 0x04);
  EXPECT_EQ(bytes[3], 0x01);
  // 1.0f = 0x3f800000
  EXPECT_EQ(bytes[4], 0x00);
  EXPECT_EQ(bytes[7], 0x3f);
  // -2.0f = 0xc0000000
  EXPECT_EQ(bytes[12 + 3], 0xc0);
  const Frame f = decode_frame(bytes);
  EXPECT_EQ(f.iteration, 0x01020304u);
  EXPECT_EQ(f.energy, 1.0f);
  EXPECT_EQ(f.positions, (std::vector<float>{1.0f, -2.0f, 0.5f}));
}

TEST(FrameFormat, RoundTripIsBitExact) {
  const TriangleMesh m = test::jitter(primitives::icosphere(2), 0.1, 4);
  const auto bytes = encode_frame(77, 3.25e-3f, m.V);
  const Frame f = decode_frame(bytes);
  EXPECT_EQ(encode_frame(f.iteration, f.energy, frame_positions(f)), bytes);
  EXPECT_THROW(decode_frame(std::vector<std::uint8_t>(7)), DecodeError);
  EXPECT_THROW(decode_frame(std::vector<std::uint8_t>(8 + 13)), DecodeError);
}

TEST(FrameFormat, IdentityNormcapReturnsQueryDirection) {
  const NormalCaptureImage img = identity_normcap(256, 128);
  std::mt19937 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d d = test::random_unit(rng);
    EXPECT_LT(angle_between(lookup_normcap(img, d), d) * 180.0 / M_PI, 3.0);
  }
}

// ---------------------------------------------------------------------------
// session protocol

TEST(Session, ErrorCodes) {
  Recorder rec;
  Session s(rec.sink());
  s.handle(request({{"type", "start"}, {"id", 1}}));
  json e = rec.wait_for("error");
  EXPECT_EQ(e["code"], "NO_SESSION");
  EXPECT_EQ(e["id"], 1);
  s.handle("not json");
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_PARAMS");
  s.handle(request({{"type", "load_mesh"}, {"obj", "v 0 0 0\nf 1 2 3\n"}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_MESH");
  s.handle(request({{"type", "load_mesh"}, {"obj", obj_text(test_mesh())}}));
  ASSERT_FALSE(rec.wait_for("session_created").is_null());
  s.handle(request({{"type", "set_style"}, {"style", "dodecahedron"}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_STYLE");
  s.handle(request({{"type", "set_style"}, {"style", "mesh:/etc/passwd"}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_STYLE");
  s.handle(request({{"type", "set_style"}, {"style", "developable"}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_STYLE");
  s.handle(request({{"type", "set_params"}, {"lambda", -1.0}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_PARAMS");
  s.handle(request({{"type", "set_params"}, {"regularization", "xyz"}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_PARAMS");
  s.handle(request({{"type", "paint_normcap"}, {"x", 250}, {"y", 0}, {"width", 10}, {"height", 1}, {"rgb", json::array()}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_STYLE");
  s.handle(request({{"type", "frobnicate"}}));
  EXPECT_EQ(rec.wait_for("error")["code"], "BAD_PARAMS");
}

TEST(Session, CreatedEchoesCounts) {
  Recorder rec;
  Session s(rec.sink());
  const TriangleMesh m = test_mesh();
  s.handle(request({{"type", "load_mesh"}, {"obj", obj_text(m)}, {"id", "a"}}));
  const json j = rec.wait_for("session_created");
  EXPECT_EQ(j["vertices"], m.vertex_count());
  EXPECT_EQ(j["faces"], m.face_count());
  EXPECT_EQ(j["sessionId"], s.id());
  EXPECT_EQ(j["id"], "a");
}

TEST(Session, ZeroLambdaStreamsInput) {
  Recorder rec;
  Session s(rec.sink());
  const TriangleMesh m = test_mesh();
  s.handle(request({{"type", "load_mesh"}, {"obj", obj_text(m)}}));
  s.handle(request({{"type", "set_style"}, {"style", "cube"}}));
  s.handle(request({{"type", "set_params"}, {"lambda", 0.0}}));
  s.handle(request({{"type", "start"}}));
  ASSERT_TRUE(s.wait_until_stopped(30s));
  EXPECT_EQ(s.loop_state(), Session::LoopState::converged);
  const auto frames = rec.frames();
  ASSERT_FALSE(frames.empty());
  EXPECT_LT(test::max_abs_diff(frame_positions(frames.back()), m.V), 1e-5);
}

TEST(Session, StyleSwapWarmStarts) {
  Recorder rec;
  Session s(rec.sink());
  const TriangleMesh m = test::jitter(primitives::icosphere(2), 0.05, 9);
  s.handle(request({{"type", "load_mesh"}, {"obj", obj_text(m)}}));
  s.handle(request({{"type", "set_params"}, {"lambda", 4.0}, {"tolerance", 1e-300}}));
  s.handle(request({{"type", "start"}, {"steps", 5}}));
  ASSERT_TRUE(s.wait_until_stopped(30s));
  s.handle(request({{"type", "set_style"}, {"style", "cube"}}));
  s.handle(request({{"type", "start"}, {"steps", 30}}));
  ASSERT_TRUE(s.wait_until_stopped(30s));
  const auto frames = rec.frames();
  ASSERT_EQ(frames.size(), 35u);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    // Iterations keep counting: no restart from the input.
    EXPECT_EQ(frames[i].iteration, i + 1);
    EXPECT_TRUE(std::isfinite(frames[i].energy));
    EXPECT_EQ(frames[i].positions.size(), 3u * m.V.rows());
    for (float x : frames[i].positions) ASSERT_TRUE(std::isfinite(x));
  }
  for (std::size_t i = 6; i < frames.size(); ++i)
    EXPECT_LE(frames[i].energy, frames[i - 1].energy * (1.0f + 1e-5f)) << "frame " << i;
  // The cube style actually moved the mesh.
  EXPECT_GT(test::max_abs_diff(frame_positions(frames.back()), frame_positions(frames[4])), 1e-3);
}

TEST(Session, TranscriptReplaysIdentically) {
  const std::string obj = obj_text(test::jitter(primitives::icosphere(2), 0.05, 2));
  auto play = [&](Recorder& rec) {
    Session s(rec.sink());
    s.handle(request({{"type", "load_mesh"}, {"obj", obj}, {"id", 1}}));
    rec.wait_for("session_created");
    s.handle(request({{"type", "set_style"}, {"style", "cube"}, {"id", 2}}));
    rec.wait_for("ack");
    s.handle(request({{"type", "start"}, {"steps", 10}, {"id", 3}}));
    rec.wait_for("ack");
    EXPECT_TRUE(s.wait_until_stopped(30s));
    s.handle(request({{"type", "pause"}, {"id", 4}}));
    s.handle(request({{"type", "export"}, {"id", 5}}));
    rec.wait_for("exported");
  };
  Recorder a, b;
  play(a);
  play(b);
  const auto ma = a.snapshot(), mb = b.snapshot();
  ASSERT_EQ(ma.size(), mb.size());
  int frames = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    ASSERT_EQ(ma[i].text, mb[i].text) << i;
    if (ma[i].text)
      EXPECT_EQ(scrub(json::parse(ma[i].json)), scrub(json::parse(mb[i].json))) << i;
    else
      EXPECT_EQ(ma[i].bytes, mb[i].bytes) << i;
    frames += !ma[i].text;
  }
  EXPECT_EQ(frames, 10);

  // Frames match an offline run of the same loop.
  const TriangleMesh in = parse_obj(obj);
  Normalization norm;
  const TriangleMesh mesh = normalize_mesh(in, &norm);
  SolverParams p;
  p.maxIterations = 1 << 30;
  NormalDrivenSolver solver(mesh, p, style_rule(AnalyticSphere{}));
  solver.set_rule(style_rule(cube_normal_set()));
  const auto fa = a.frames();
  for (int k = 0; k < 10; ++k) {
    const double e = solver.step();
    EXPECT_EQ(fa[k].energy, static_cast<float>(e));
    EXPECT_EQ(encode_frame(fa[k].iteration, fa[k].energy, norm.invert(solver.state().U)),
              encode_frame(fa[k].iteration, fa[k].energy, frame_positions(fa[k])));
  }
}

TEST(Session, PausedExportIsStable) {
  Recorder rec;
  Session s(rec.sink());
  const TriangleMesh m = test_mesh();
  s.handle(request({{"type", "load_mesh"}, {"obj", obj_text(m)}}));
  s.handle(request({{"type", "set_style"}, {"style", "icosahedron"}}));
  s.handle(request({{"type", "start"}}));
  std::this_thread::sleep_for(20ms);
  s.handle(request({{"type", "pause"}}));
  s.handle(request({{"type", "export"}}));
  s.handle(request({{"type", "export"}}));
  const json a = rec.wait_for("exported"), b = rec.wait_for("exported");
  EXPECT_EQ(a["obj"], b["obj"]);

  // Reset brings the input back.
  s.handle(request({{"type", "reset"}}));
  s.handle(request({{"type", "export"}}));
  const TriangleMesh back = parse_obj(rec.wait_for("exported")["obj"].get<std::string>());
  EXPECT_LT(test::max_abs_diff(back.V, m.V), 1e-5);
}

TEST(Session, PaintNormcapAndEnergyStyles) {
  Recorder rec;
  Session s(rec.sink());
  s.handle(request({{"type", "load_mesh"}, {"obj", obj_text(primitives::icosphere(2))}}));
  rec.wait_for("session_created");
  // Paint the whole canvas with the +x color: every target becomes +x.
  const int w = 32, h = 16;
  const auto c = encode_normal(Eigen::Vector3d::UnitX());
  std::vector<int> rgb;
  for (int i = 0; i < w * h; ++i) rgb.insert(rgb.end(), c.begin(), c.end());
  s.handle(request({{"type", "paint_normcap"},
                    {"canvasWidth", w},
                    {"canvasHeight", h},
                    {"x", 0},
                    {"y", 0},
                    {"width", w},
                    {"height", h},
                    {"rgb", rgb}}));
  EXPECT_EQ(rec.wait_for("ack")["request"], "paint_normcap");
  s.handle(request({{"type", "set_params"}, {"lambda", 4.0}}));
  s.handle(request({{"type", "start"}, {"steps", 20}}));
  ASSERT_TRUE(s.wait_until_stopped(30s));
  const auto frames = rec.frames();
  ASSERT_FALSE(frames.empty());
  // Mean angle of face normals to +x drops.
  auto mean_angle_to_x = [](const Positions& V) {
    const Positions N = face_normals(V, primitives::icosphere(2).F);
    double sum = 0.0;
    for (Eigen::Index f = 0; f < N.rows(); ++f) sum += angle_between(N.row(f).transpose(), Eigen::Vector3d::UnitX());
    return sum / static_cast<double>(N.rows());
  };
  EXPECT_LT(mean_angle_to_x(frame_positions(frames.back())), mean_angle_to_x(primitives::icosphere(2).V) - 0.05);

  s.handle(request({{"type", "set_params"}, {"regularization", "farap"}}));
  s.handle(request({{"type", "set_style"}, {"style", "developable"}}));
  s.handle(request({{"type", "start"}, {"steps", 5}}));
  ASSERT_TRUE(s.wait_until_stopped(30s));
  s.handle(request({{"type", "set_style"}, {"style", "polycube"}}));
  s.handle(request({{"type", "start"}, {"steps", 5}}));
  ASSERT_TRUE(s.wait_until_stopped(30s));
  s.handle(request({{"type", "set_style"}, {"style", "sphere"}}));
  s.handle(request({{"type", "set_params"}, {"regularization", "acap"}}));
  s.handle(request({{"type", "start"}, {"steps", 5}}));
  ASSERT_TRUE(s.wait_until_stopped(30s));
  for (const auto& t : rec.texts()) EXPECT_NE(t["type"], "error") << t.dump();
  for (const auto& f : rec.frames()) EXPECT_TRUE(std::isfinite(f.energy));
  EXPECT_EQ(rec.frames().size(), frames.size() + 15);
}

TEST(Session, ConcurrentSessions) {
  Recorder ra, rb;
  Session a(ra.sink()), b(rb.sink());
  EXPECT_NE(a.id(), b.id());
  a.handle(request({{"type", "load_mesh"}, {"obj", obj_text(primitives::icosphere(2))}}));
  b.handle(request({{"type", "load_mesh"}, {"obj", obj_text(primitives::cube(3))}}));
  a.handle(request({{"type", "set_style"}, {"style", "cube"}}));
  b.handle(request({{"type", "set_style"}, {"style", "tetrahedron"}}));
  a.handle(request({{"type", "start"}, {"steps", 8}}));
  b.handle(request({{"type", "start"}, {"steps", 8}}));
  ASSERT_TRUE(a.wait_until_stopped(30s));
  ASSERT_TRUE(b.wait_until_stopped(30s));
  EXPECT_EQ(ra.frames().size(), 8u);
  EXPECT_EQ(rb.frames().size(), 8u);
  EXPECT_EQ(ra.frames().back().positions.size(), 3u * primitives::icosphere(2).V.rows());
  EXPECT_EQ(rb.frames().back().positions.size(), 3u * primitives::cube(3).V.rows());
}

// ---------------------------------------------------------------------------
// WebSocket transport

TEST(WebSocket, LoadStartFramesExport) {
  net::io_context io;
  Server server(io, 0);
  server.start();
  std::thread io_thread([&] { io.run(); });

  {
    net::io_context client_io;
    tcp::resolver resolver(client_io);
    websocket::stream<tcp::socket> ws(client_io);
    net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
    ws.handshake("127.0.0.1", "/");
    auto send = [&](const json& j) {
      ws.text(true);
      ws.write(net::buffer(j.dump()));
    };
    auto next = [&](bool& text) {
      beast::flat_buffer buf;
      ws.read(buf);
      text = ws.got_text();
      return beast::buffers_to_string(buf.data());
    };

    const TriangleMesh m = test_mesh();
    send({{"type", "load_mesh"}, {"obj", obj_text(m)}});
    bool text = false;
    json created = json::parse(next(text));
    ASSERT_TRUE(text);
    EXPECT_EQ(created["type"], "session_created");
    EXPECT_EQ(created["vertices"], m.vertex_count());

    send({{"type", "set_style"}, {"style", "cube"}});
    send({{"type", "start"}, {"steps", 4}});
    int frames = 0;
    std::uint32_t last = 0;
    bool paused = false;
    while (!paused) {
      const std::string msg = next(text);
      if (text) {
        const json j = json::parse(msg);
        ASSERT_NE(j["type"], "error") << msg;
        paused = j.value("state", "") == "paused";
      } else {
        const Frame f = decode_frame(std::vector<std::uint8_t>(msg.begin(), msg.end()));
        EXPECT_GT(f.iteration, last);
        last = f.iteration;
        EXPECT_EQ(f.positions.size(), 3u * m.V.rows());
        ++frames;
      }
    }
    // Frames may be coalesced under load, never duplicated.
    EXPECT_GE(frames, 1);
    EXPECT_LE(frames, 4);
    EXPECT_EQ(last, 4u);

    send({{"type", "export"}});
    json exported;
    do {
      const std::string msg = next(text);
      if (text) exported = json::parse(msg);
    } while (exported.is_null() || exported["type"] != "exported");
    EXPECT_EQ(parse_obj(exported["obj"].get<std::string>()).V.rows(), m.V.rows());
    ws.close(websocket::close_code::normal);
  }

  server.stop();
  io.stop();
  io_thread.join();
}
