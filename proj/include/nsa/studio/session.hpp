#pragma once

// Interactive stylization session, independent of the transport. Requests
// and responses are JSON text; positions stream as binary frames:
//   [u32 iteration][f32 energy][f32 x 3|V| positions], little-endian.
//
// One worker thread per session runs the solver loop. Requests are
// validated on the caller's thread and staged in a mailbox; the worker
// applies staged changes only between iterations.

#include <json.hpp>

#include <atomic>
#include <bit>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "nsa/mesh.hpp"
#include "nsa/obj_io.hpp"
#include "nsa/solver.hpp"
#include "nsa/style_energies.hpp"
#include "nsa/style_spec.hpp"

namespace nsa::studio {

using json = nlohmann::json;

/// Outgoing channel. Both callbacks may be invoked from the worker thread
/// and from the thread calling Session::handle.
struct Sink {
  std::function<void(std::string)> text;
  std::function<void(std::vector<std::uint8_t>)> binary;
};

struct Frame {
  std::uint32_t iteration = 0;
  float energy = 0.0f;
  std::vector<float> positions;  // x0 y0 z0 x1 ...
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_frame(std::uint32_t iteration, float energy, const Positions& V) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 12 * static_cast<std::size_t>(V.rows()));
  detail::put_u32(out, iteration);
  detail::put_u32(out, std::bit_cast<std::uint32_t>(energy));
  for (Eigen::Index i = 0; i < V.rows(); ++i)
    for (int c = 0; c < 3; ++c) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(V(i, c))));
  return out;
}

/// Throws DecodeError on a truncated or misaligned buffer.
inline Frame decode_frame(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || (bytes.size() - 8) % 12 != 0) throw DecodeError("frame size is not 8 + 12k bytes");
  Frame f;
  f.iteration = detail::get_u32(bytes.data());
  f.energy = std::bit_cast<float>(detail::get_u32(bytes.data() + 4));
  f.positions.resize((bytes.size() - 8) / 4);
  for (std::size_t i = 0; i < f.positions.size(); ++i)
    f.positions[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + 8 + 4 * i));
  return f;
}

/// Equirectangular capture where every pixel encodes its own direction, so
/// lookups return the query direction up to quantization.
inline NormalCaptureImage identity_normcap(int width, int height) {
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto c = encode_normal(normcap_pixel_direction(x, y, width, height));
      std::memcpy(&rgb[(static_cast<std::size_t>(y) * width + x) * 3], c.data(), 3);
    }
  return decode_normcap(width, height, std::move(rgb));
}

/// Protocol error carrying one of BAD_MESH, BAD_STYLE, BAD_PARAMS, NO_SESSION.
class ProtocolError : public Error {
 public:
  ProtocolError(std::string code, const std::string& message) : Error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

class Session {
 public:
  enum class LoopState { idle, running, paused, converged };

  explicit Session(Sink sink) : sink_(std::move(sink)) {
    std::random_device rd;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08x%08x", rd(), rd());
    id_ = buf;
  }

  ~Session() { stop_worker(); }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }

  LoopState loop_state() const {
    std::lock_guard lock(mutex_);
    return state_;
  }

  /// Handles one JSON request. Every reply goes through the sink.
  void handle(const std::string& text) {
    json request;
    json id;
    std::string type;
    try {
      request = json::parse(text);
      if (!request.is_object() || !request.contains("type") || !request["type"].is_string())
        throw ProtocolError("BAD_PARAMS", "request needs a string 'type'");
      type = request["type"].get<std::string>();
      if (request.contains("id")) id = request["id"];
      dispatch(type, request, id);
    } catch (const ProtocolError& e) {
      send_error(e.code(), e.what(), type, id);
    } catch (const json::exception& e) {
      send_error("BAD_PARAMS", e.what(), type, id);
    }
  }

  /// Blocks until the worker is idle, paused or converged. Test helper.
  bool wait_until_stopped(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    return stopped_cv_.wait_for(lock, timeout, [&] { return state_ != LoopState::running && staged_.empty(); });
  }

 private:
  using Change = std::function<void(NormalDrivenSolver&)>;

  // What the next iteration will run with; requests validate against it.
  struct Config {
    StyleSpec style;
    std::optional<StyleField> field;  // uploaded mesh or painted capture
    SolverParams params;
    DevelopableParams developable;
  };

  void dispatch(const std::string& type, const json& req, const json& id) {
    if (type == "load_mesh") return load_mesh(req, id);
    if (!solver_) throw ProtocolError("NO_SESSION", "no mesh loaded; send load_mesh first");
    if (type == "set_style") return set_style(req, id);
    if (type == "set_params") return set_params(req, id);
    if (type == "paint_normcap") return paint_normcap(req, id);
    if (type == "start") return start(req, id);
    if (type == "pause") return pause(id);
    if (type == "reset") return reset(id);
    if (type == "export") return export_obj(id);
    throw ProtocolError("BAD_PARAMS", "unknown request type '" + type + "'");
  }

  void load_mesh(const json& req, const json& id) {
    if (!req.contains("obj") || !req["obj"].is_string()) throw ProtocolError("BAD_MESH", "load_mesh needs 'obj' text");
    TriangleMesh mesh;
    Normalization norm;
    try {
      mesh = normalize_mesh(parse_obj(req["obj"].get<std::string>()), &norm);
    } catch (const Error& e) {
      throw ProtocolError("BAD_MESH", e.what());
    }
    Config config;
    config.params.maxIterations = 1 << 30;
    std::unique_ptr<NormalDrivenSolver> solver;
    try {
      solver = std::make_unique<NormalDrivenSolver>(mesh, config.params, style_rule(AnalyticSphere{}));
    } catch (const Error& e) {
      throw ProtocolError("BAD_MESH", e.what());
    }
    stop_worker();
    {
      std::lock_guard lock(mutex_);
      solver_ = std::move(solver);
      config_ = config;
      norm_ = norm;
      staged_.clear();
      state_ = LoopState::idle;
      stepsLeft_ = -1;
      quit_ = false;
    }
    worker_ = std::thread([this] { run(); });
    reply({{"type", "session_created"},
           {"sessionId", id_},
           {"vertices", mesh.vertex_count()},
           {"faces", mesh.face_count()}},
          id);
  }

  void set_style(const json& req, const json& id) {
    if (!req.contains("style") || !req["style"].is_string()) throw ProtocolError("BAD_STYLE", "set_style needs 'style'");
    const std::string name = req["style"].get<std::string>();
    Config next = config_;
    next.field.reset();
    try {
      if (name == "mesh") {
        if (!req.contains("obj") || !req["obj"].is_string()) throw InvalidArgument("style 'mesh' needs 'obj' text");
        next.style = StyleSpec{StyleKind::mesh, {}};
        next.field = conformalized_mcf(parse_obj(req["obj"].get<std::string>()));
      } else if (name == "normcap") {
        next.style = StyleSpec{StyleKind::normcap, {}};
        next.field = decode_normcap(req.at("width").get<int>(), req.at("height").get<int>(),
                                    req.at("rgb").get<std::vector<std::uint8_t>>());
      } else if (name == "polytope") {
        std::vector<Eigen::Vector3d> dirs;
        for (const auto& d : req.at("directions")) dirs.emplace_back(d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>());
        next.style = StyleSpec{StyleKind::polytope, {}};
        next.field = axis_normal_set(dirs);
      } else {
        next.style = parse_style_spec(name);
        if (!next.style.path.empty()) throw InvalidArgument("file paths are not accepted over the wire");
      }
      check_style_regularization(next.style, next.params.regularization);
    } catch (const json::exception& e) {
      throw ProtocolError("BAD_STYLE", e.what());
    } catch (const Error& e) {
      throw ProtocolError("BAD_STYLE", e.what());
    }
    stage_config(std::move(next));
    reply({{"type", "ack"}, {"request", "set_style"}}, id);
  }

  void set_params(const json& req, const json& id) {
    Config next = config_;
    try {
      if (req.contains("lambda")) next.params.lambda = req["lambda"].get<double>();
      if (req.contains("regularization"))
        next.params.regularization = parse_regularization(req["regularization"].get<std::string>());
      if (req.contains("dynamicT")) next.params.dynamicTargets = req["dynamicT"].get<bool>();
      if (req.contains("tolerance")) next.params.convergenceTol = req["tolerance"].get<double>();
      if (req.contains("creaseThreshold")) next.developable.creaseThreshold = req["creaseThreshold"].get<double>();
      next.params.validate();
      next.developable.validate();
      check_style_regularization(next.style, next.params.regularization);
    } catch (const json::exception& e) {
      throw ProtocolError("BAD_PARAMS", e.what());
    } catch (const Error& e) {
      throw ProtocolError("BAD_PARAMS", e.what());
    }
    stage_config(std::move(next));
    reply({{"type", "ack"}, {"request", "set_params"}}, id);
  }

  // Writes an RGB patch into the capture; starts from an identity capture
  // when the current style is not one.
  void paint_normcap(const json& req, const json& id) {
    Config next = config_;
    try {
      NormalCaptureImage img;
      if (next.style.kind == StyleKind::normcap && next.field)
        img = std::get<NormalCaptureImage>(*next.field);
      else
        img = identity_normcap(req.value("canvasWidth", 256), req.value("canvasHeight", 128));
      const int x = req.at("x").get<int>(), y = req.at("y").get<int>();
      const int w = req.at("width").get<int>(), h = req.at("height").get<int>();
      const auto rgb = req.at("rgb").get<std::vector<std::uint8_t>>();
      if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > img.width || y + h > img.height)
        throw InvalidArgument("patch lies outside the capture");
      if (rgb.size() != static_cast<std::size_t>(w) * h * 3) throw InvalidArgument("patch size does not match 'rgb'");
      for (int r = 0; r < h; ++r)
        std::memcpy(&img.rgb[(static_cast<std::size_t>(y + r) * img.width + x) * 3], &rgb[static_cast<std::size_t>(r) * w * 3],
                    static_cast<std::size_t>(w) * 3);
      // Every pixel must decode to a usable direction.
      for (std::size_t p = 0; p < img.rgb.size(); p += 3) {
        const Eigen::Vector3d n(img.rgb[p], img.rgb[p + 1], img.rgb[p + 2]);
        if ((2.0 * n / 255.0 - Eigen::Vector3d::Ones()).norm() < 0.1)
          throw DecodeError("patch contains a pixel that decodes to a near-zero normal");
      }
      next.style = StyleSpec{StyleKind::normcap, {}};
      next.field = std::move(img);
      check_style_regularization(next.style, next.params.regularization);
    } catch (const json::exception& e) {
      throw ProtocolError("BAD_STYLE", e.what());
    } catch (const Error& e) {
      throw ProtocolError("BAD_STYLE", e.what());
    }
    stage_config(std::move(next));
    reply({{"type", "ack"}, {"request", "paint_normcap"}}, id);
  }

  void start(const json& req, const json& id) {
    int steps = -1;
    if (req.contains("steps")) {
      if (!req["steps"].is_number_integer() || req["steps"].get<int>() < 1)
        throw ProtocolError("BAD_PARAMS", "'steps' must be a positive integer");
      steps = req["steps"].get<int>();
    }
    {
      std::lock_guard lock(mutex_);
      stepsLeft_ = steps;
      state_ = LoopState::running;
    }
    wake_.notify_all();
    reply({{"type", "ack"}, {"request", "start"}}, id);
  }

  void pause(const json& id) {
    {
      std::lock_guard lock(mutex_);
      if (state_ == LoopState::running) state_ = LoopState::paused;
    }
    // Wait for the iteration in flight so the reply reflects a still loop.
    std::lock_guard step(step_mutex_);
    reply({{"type", "ack"}, {"request", "pause"}}, id);
  }

  void reset(const json& id) {
    stage([](NormalDrivenSolver& s) { s.reset(); });
    {
      std::lock_guard lock(mutex_);
      if (state_ == LoopState::converged) state_ = LoopState::idle;
    }
    reply({{"type", "ack"}, {"request", "reset"}}, id);
  }

  void export_obj(const json& id) {
    TriangleMesh out;
    {
      // Staged edits (a reset, say) land before the snapshot.
      std::unique_lock lock(mutex_);
      drained_cv_.wait(lock, [&] { return staged_.empty() || quit_; });
      std::lock_guard step(step_mutex_);
      lock.unlock();
      out = solver_->mesh();
      out.V = norm_.invert(solver_->state().U);
    }
    reply({{"type", "exported"}, {"obj", format_obj(out)}}, id);
  }

  // Queues the change that moves the solver from the current config to
  // `next`. Style and parameter edits rebuild targets in place.
  void stage_config(Config next) {
    const Config prev = config_;
    config_ = next;
    stage([prev, next](NormalDrivenSolver& s) {
      SolverParams p = next.params;
      if (next.style.energy_defined())
        p = next.style.kind == StyleKind::developable ? developable_solver_params(p) : polycube_solver_params(p);
      if (p.regularization != s.params().regularization) s.set_regularization(p.regularization);
      if (p.lambda != s.params().lambda) s.set_lambda(p.lambda);
      if (p.convergenceTol != s.params().convergenceTol) s.set_limits(s.params().maxIterations, p.convergenceTol);
      const bool style_changed = prev.style.kind != next.style.kind || next.field ||
                                 prev.developable.creaseThreshold != next.developable.creaseThreshold;
      if (style_changed || p.dynamicTargets != s.params().dynamicTargets) {
        LoopHooks hooks;
        TargetRule rule;
        if (next.style.kind == StyleKind::developable) {
          rule = developable_rule(next.developable);
        } else if (next.style.kind == StyleKind::polycube) {
          rule = polycube_rule(PolyCubeParams{}.axisSet);
          hooks = polycube_hooks({});
        } else {
          rule = style_rule(next.field ? *next.field : load_style_field(next.style));
        }
        s.set_hooks(std::move(hooks));
        s.set_dynamic_targets(p.dynamicTargets);
        s.set_rule(std::move(rule));
      }
    });
  }

  void stage(Change change) {
    {
      std::lock_guard lock(mutex_);
      staged_.push_back(std::move(change));
      if (state_ == LoopState::converged) state_ = LoopState::paused;
    }
    wake_.notify_all();
  }

  void run() {
    std::unique_lock lock(mutex_);
    for (;;) {
      wake_.wait(lock, [&] { return quit_ || !staged_.empty() || state_ == LoopState::running; });
      if (quit_) return;
      std::deque<Change> changes;
      changes.swap(staged_);
      const bool running = state_ == LoopState::running;
      std::unique_lock step(step_mutex_);
      lock.unlock();
      drained_cv_.notify_all();

      bool failed = false;
      for (auto& c : changes) {
        try {
          c(*solver_);
        } catch (const Error& e) {
          send_error("BAD_PARAMS", e.what(), "staged", nullptr);
        }
      }
      std::optional<std::vector<std::uint8_t>> frame;
      bool converged = false;
      if (running) {
        try {
          const double e = solver_->step();
          const auto& st = solver_->state();
          frame = encode_frame(static_cast<std::uint32_t>(st.iteration), static_cast<float>(e), norm_.invert(st.U));
          converged = solver_->converged();
        } catch (const Error& e) {
          failed = true;
          send_error("BAD_PARAMS", e.what(), "step", nullptr);
        }
      }
      step.unlock();
      if (frame && sink_.binary) sink_.binary(std::move(*frame));

      lock.lock();
      if (running && state_ == LoopState::running) {
        if (failed) {
          state_ = LoopState::paused;
        } else if (converged) {
          state_ = LoopState::converged;
        } else if (stepsLeft_ > 0 && --stepsLeft_ == 0) {
          state_ = LoopState::paused;
        }
        if (state_ != LoopState::running) {
          const char* name = state_ == LoopState::converged ? "converged" : "paused";
          const json status = {{"type", "ack"}, {"request", "status"}, {"state", name}};
          lock.unlock();
          if (sink_.text) sink_.text(status.dump());
          lock.lock();
        }
      }
      if (state_ != LoopState::running && staged_.empty()) stopped_cv_.notify_all();
    }
  }

  void stop_worker() {
    {
      std::lock_guard lock(mutex_);
      quit_ = true;
    }
    wake_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  void reply(json message, const json& id) {
    if (!id.is_null()) message["id"] = id;
    if (sink_.text) sink_.text(message.dump());
  }

  void send_error(const std::string& code, const std::string& message, const std::string& request, const json& id) {
    json m = {{"type", "error"}, {"code", code}, {"message", message}};
    if (!request.empty()) m["request"] = request;
    reply(std::move(m), id);
  }

  Sink sink_;
  std::string id_;
  Config config_;  // touched only by the handling thread
  Normalization norm_;
  std::unique_ptr<NormalDrivenSolver> solver_;

  mutable std::mutex mutex_;  // guards state_, staged_, stepsLeft_, quit_
  std::mutex step_mutex_;     // held while the solver is stepped or mutated
  std::condition_variable wake_, stopped_cv_, drained_cv_;
  std::deque<Change> staged_;
  LoopState state_ = LoopState::idle;
  int stepsLeft_ = -1;
  bool quit_ = false;
  std::thread worker_;
};

}  // namespace nsa::studio
