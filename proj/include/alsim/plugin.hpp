#pragma once

// External classifier backend over newline-delimited JSON on the child's
// stdin/stdout. See docs/protocol.md for the message catalogue.

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "alsim/classifier.hpp"
#include "alsim/common.hpp"
#include "alsim/features.hpp"
#include "json.hpp"

extern char** environ;

namespace alsim {

inline constexpr int kProtocolVersion = 1;

inline constexpr std::string_view kPluginCommands[] = {"hello",   "train", "predict",
                                                       "embed",   "reset", "shutdown"};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport or remote failure: crash, timeout, or an ok=false response.
class PluginError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PluginRequest {
  std::string cmd;
  nlohmann::json payload = nlohmann::json::object();
  bool operator==(const PluginRequest&) const = default;
};

/// `body` holds every response field other than v, ok and error.
struct PluginResponse {
  bool ok = true;
  std::string error;
  nlohmann::json body = nlohmann::json::object();
  bool operator==(const PluginResponse&) const = default;

  static PluginResponse success(nlohmann::json body = nlohmann::json::object()) {
    return {true, "", std::move(body)};
  }
  static PluginResponse failure(std::string error, std::string kind = {}) {
    PluginResponse r{false, std::move(error), nlohmann::json::object()};
    if (!kind.empty()) r.body["error_kind"] = std::move(kind);
    return r;
  }
};

inline bool is_plugin_command(std::string_view cmd) {
  for (auto c : kPluginCommands)
    if (c == cmd) return true;
  return false;
}

namespace detail {

inline std::string dump_line(const nlohmann::json& j) {
  // Compact dumps never contain a raw newline: string newlines are escaped.
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

inline nlohmann::json parse_line(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (line.find('\n') != std::string_view::npos)
    throw ProtocolError("message contains a raw newline");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message is not a JSON object");
  if (!j.contains("v") || !j["v"].is_number_integer())
    throw ProtocolError("message lacks an integer protocol version");
  if (j["v"].get<int>() != kProtocolVersion)
    throw ProtocolError("protocol version mismatch: got " + j["v"].dump() + ", expected " +
                        std::to_string(kProtocolVersion));
  return j;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

inline std::uint64_t parse_hex64(const std::string& s) {
  if (s.empty() || s.size() > 16) throw ProtocolError("bad hex fingerprint: " + s);
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9')
      v |= std::uint64_t(c - '0');
    else if (c >= 'a' && c <= 'f')
      v |= std::uint64_t(c - 'a' + 10);
    else
      throw ProtocolError("bad hex fingerprint: " + s);
  }
  return v;
}

}  // namespace detail

inline std::string encode_request(const PluginRequest& r) {
  if (!is_plugin_command(r.cmd)) throw ProtocolError("unknown command: " + r.cmd);
  if (!r.payload.is_object()) throw ProtocolError("payload must be an object");
  return detail::dump_line({{"v", kProtocolVersion}, {"cmd", r.cmd}, {"payload", r.payload}});
}

inline PluginRequest decode_request(std::string_view line) {
  auto j = detail::parse_line(line);
  if (!j.contains("cmd") || !j["cmd"].is_string()) throw ProtocolError("request lacks cmd");
  PluginRequest r;
  r.cmd = j["cmd"].get<std::string>();
  if (!is_plugin_command(r.cmd)) throw ProtocolError("unknown command: " + r.cmd);
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw ProtocolError("payload must be an object");
    r.payload = j["payload"];
  }
  for (const auto& [key, _] : j.items())
    if (key != "v" && key != "cmd" && key != "payload")
      throw ProtocolError("unexpected request field: " + key);
  return r;
}

inline std::string encode_response(const PluginResponse& r) {
  if (!r.body.is_object()) throw ProtocolError("response body must be an object");
  nlohmann::json j = r.body;
  for (auto key : {"v", "ok", "error"})
    if (j.contains(key)) throw ProtocolError(std::string("reserved response field: ") + key);
  j["v"] = kProtocolVersion;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  return detail::dump_line(j);
}

inline PluginResponse decode_response(std::string_view line) {
  auto j = detail::parse_line(line);
  if (!j.contains("ok") || !j["ok"].is_boolean()) throw ProtocolError("response lacks ok flag");
  PluginResponse r;
  r.ok = j["ok"].get<bool>();
  if (!r.ok) {
    if (!j.contains("error") || !j["error"].is_string())
      throw ProtocolError("failed response lacks an error string");
    r.error = j["error"].get<std::string>();
  }
  j.erase("v");
  j.erase("ok");
  j.erase("error");
  r.body = std::move(j);
  return r;
}

// ---------------------------------------------------------------------------
// Child process

/// A plugin child process with its stdin and stdout joined to one end of a
/// socket pair. Requests are strictly serialized.
class PluginProcess {
 public:
  PluginProcess(const std::vector<std::string>& argv, std::chrono::milliseconds timeout)
      : timeout_(timeout) {
    if (argv.empty()) throw std::invalid_argument("empty plugin command");
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
      throw PluginError(std::string("socketpair: ") + std::strerror(errno));
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, sv[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&fa, sv[1], STDOUT_FILENO);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    const int rc = ::posix_spawnp(&pid_, args[0], &fa, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    ::close(sv[1]);
    if (rc != 0) {
      ::close(sv[0]);
      throw PluginError("cannot start plugin '" + argv[0] + "': " + std::strerror(rc));
    }
    fd_ = sv[0];
  }

  PluginProcess(const PluginProcess&) = delete;
  PluginProcess& operator=(const PluginProcess&) = delete;

  ~PluginProcess() {
    if (fd_ >= 0 && alive_) {
      try {
        call({"shutdown", nlohmann::json::object()});
      } catch (...) {
      }
    }
    if (fd_ >= 0) ::close(fd_);
    reap();
  }

  PluginResponse call(const PluginRequest& req) {
    if (!alive_) throw PluginError("plugin process is not running");
    send_all(encode_request(req));
    const auto line = read_line();
    if (req.cmd == "shutdown") alive_ = false;
    try {
      return decode_response(line);
    } catch (const ProtocolError&) {
      fail();
      throw;
    }
  }

 private:
  void send_all(const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const auto n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail();
        throw PluginError(std::string("plugin write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (true) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl + 1);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        fail();
        throw PluginError("plugin timed out after " + std::to_string(timeout_.count()) + " ms");
      }
      pollfd p{fd_, POLLIN, 0};
      const int pr = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (pr < 0) {
        if (errno == EINTR) continue;
        fail();
        throw PluginError(std::string("poll: ") + std::strerror(errno));
      }
      if (pr == 0) continue;
      char chunk[65536];
      const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        fail();
        throw PluginError("plugin process exited or closed its output");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void fail() {
    alive_ = false;
    if (pid_ > 0) ::kill(pid_, SIGKILL);
  }

  void reap() {
    if (pid_ <= 0) return;
    for (int i = 0; i < 200; ++i) {
      int status = 0;
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_ || r < 0) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }

  pid_t pid_ = -1;
  int fd_ = -1;
  bool alive_ = true;
  std::chrono::milliseconds timeout_;
  std::string buffer_;
};

// ---------------------------------------------------------------------------
// Learner adapter

class PluginLearner;

class PluginModel final : public Model {
 public:
  PluginModel(PluginLearner* owner, std::uint64_t model_id, std::uint64_t fingerprint)
      : owner_(owner), model_id_(model_id), fingerprint_(fingerprint) {}

  std::vector<ClassProbs> predict_proba(std::span<const Sample> samples) const override;
  std::uint64_t fingerprint() const override { return fingerprint_; }
  std::uint64_t model_id() const { return model_id_; }
  nlohmann::json to_json() const override {
    return {{"backend", "external-plugin"},
            {"model_id", model_id_},
            {"fingerprint", detail::hex64(fingerprint_)}};
  }

 private:
  PluginLearner* owner_;
  std::uint64_t model_id_;
  std::uint64_t fingerprint_;
};

struct PluginSettings {
  std::size_t embedding_dim = 256;  // requested; the plugin's hello reply is authoritative
  std::uint64_t projection_seed = 0;
  std::filesystem::path vocab_path;  // optional, forwarded in hello
  std::chrono::milliseconds timeout{600000};
};

/// Learner whose fit/predict/embed run in a child process. Only the most
/// recently trained model can be queried.
class PluginLearner final : public Learner {
 public:
  PluginLearner(ClassifierSpec spec, PluginSettings settings)
      : spec_(std::move(spec)), settings_(std::move(settings)) {
    spec_.validate();
    if (spec_.plugin_options.contains("timeout_seconds"))
      settings_.timeout = std::chrono::milliseconds(
          static_cast<long long>(spec_.plugin_options["timeout_seconds"].get<double>() * 1000.0));
    process_ = std::make_unique<PluginProcess>(spec_.plugin_command, settings_.timeout);
    nlohmann::json hello = {{"protocol_version", kProtocolVersion},
                            {"classifier", spec_.to_json()},
                            {"options", spec_.plugin_options},
                            {"embedding_dim", settings_.embedding_dim},
                            {"projection_seed", settings_.projection_seed}};
    if (!settings_.vocab_path.empty()) hello["vocab_path"] = settings_.vocab_path.string();
    const auto r = call("hello", hello);
    if (!r.contains("protocol_version") || r["protocol_version"] != kProtocolVersion)
      throw PluginError("plugin protocol version mismatch");
    embedding_dim_ = r.at("embedding_dim").get<std::size_t>();
    if (embedding_dim_ == 0) throw PluginError("plugin reported embedding_dim 0");
  }

  std::shared_ptr<const Model> fit(std::span<const Sample> labeled, std::span<const Label> labels,
                                   std::span<const std::size_t> batch_sizes,
                                   const Vocabulary& features) override {
    if (labeled.empty()) throw std::invalid_argument("cannot fit on an empty labeled set");
    if (labeled.size() != labels.size()) throw std::invalid_argument("label count mismatch");
    const bool has_pos = std::find(labels.begin(), labels.end(), kAbuse) != labels.end();
    const bool has_neg = std::find(labels.begin(), labels.end(), kNonAbuse) != labels.end();
    if (!has_pos || !has_neg) throw SingleClassError("labeled set contains a single class");

    nlohmann::json payload = texts_payload(labeled);
    std::vector<int> ys(labels.begin(), labels.end());
    payload["labels"] = ys;
    payload["batch_sizes"] = std::vector<std::size_t>(batch_sizes.begin(), batch_sizes.end());
    payload["seed"] = spec_.seed;
    payload["vocab_fingerprint"] = detail::hex64(features.fingerprint());
    const auto r = call("train", payload);
    current_model_ = r.at("model_id").get<std::uint64_t>();
    return std::make_shared<PluginModel>(this, current_model_,
                                         training_fingerprint(labeled, labels));
  }

  std::vector<ClassProbs> predict(std::uint64_t model_id, std::span<const Sample> samples) {
    if (model_id != current_model_)
      throw PluginError("plugin model " + std::to_string(model_id) + " has been superseded");
    auto payload = texts_payload(samples);
    payload["model_id"] = model_id;
    const auto r = call("predict", payload);
    const auto& probs = r.at("probs");
    if (!probs.is_array() || probs.size() != samples.size())
      throw PluginError("predict returned the wrong number of probability pairs");
    std::vector<ClassProbs> out;
    out.reserve(samples.size());
    for (const auto& p : probs) {
      ClassProbs cp{p.at(0).get<double>(), p.at(1).get<double>()};
      if (!(cp[0] >= 0.0 && cp[1] >= 0.0) || std::abs(cp[0] + cp[1] - 1.0) > 1e-6)
        throw PluginError("plugin returned an invalid probability pair");
      out.push_back(cp);
    }
    return out;
  }

  std::vector<DenseVector> embed(std::span<const Sample> samples) override {
    const auto r = call("embed", texts_payload(samples));
    const auto& rows = r.at("embeddings");
    if (!rows.is_array() || rows.size() != samples.size())
      throw PluginError("embed returned the wrong number of vectors");
    std::vector<DenseVector> out;
    out.reserve(samples.size());
    for (const auto& row : rows) {
      out.push_back(row.get<DenseVector>());
      if (out.back().size() != embedding_dim_)
        throw PluginError("embedding dimension mismatch within a batch");
    }
    return out;
  }

  void reset() {
    call("reset", nlohmann::json::object());
    current_model_ = 0;
  }

  std::size_t embedding_dim() const override { return embedding_dim_; }
  const ClassifierSpec& spec() const override { return spec_; }

 private:
  static nlohmann::json texts_payload(std::span<const Sample> samples) {
    std::vector<DocId> ids;
    std::vector<std::string_view> texts;
    for (const auto& s : samples) {
      ids.push_back(s.id);
      texts.push_back(s.text);
    }
    return {{"ids", ids}, {"texts", texts}};
  }

  nlohmann::json call(const std::string& cmd, nlohmann::json payload) {
    const auto resp = process_->call({cmd, std::move(payload)});
    if (!resp.ok) {
      if (resp.body.value("error_kind", "") == "single_class") throw SingleClassError(resp.error);
      throw PluginError("plugin " + cmd + " failed: " + resp.error);
    }
    return resp.body;
  }

  ClassifierSpec spec_;
  PluginSettings settings_;
  std::unique_ptr<PluginProcess> process_;
  std::size_t embedding_dim_ = 0;
  std::uint64_t current_model_ = 0;
};

inline std::vector<ClassProbs> PluginModel::predict_proba(std::span<const Sample> samples) const {
  return owner_->predict(model_id_, samples);
}

// ---------------------------------------------------------------------------
// Reference server: the builtin linear learner behind the protocol

/// Plugin-side handler that reproduces LinearLearner exactly. Needs the
/// pool vocabulary via hello's vocab_path.
class BuiltinPluginServer {
 public:
  PluginResponse handle(const PluginRequest& req) {
    try {
      if (req.cmd == "hello") return hello(req.payload);
      if (req.cmd == "shutdown") return PluginResponse::success();
      if (!vocab_) return PluginResponse::failure("hello has not been received");
      if (req.cmd == "reset") {
        model_.reset();
        return PluginResponse::success();
      }
      if (req.cmd == "train") return train(req.payload);
      if (req.cmd == "predict") return predict(req.payload);
      if (req.cmd == "embed") return embed(req.payload);
      return PluginResponse::failure("unknown command: " + req.cmd);
    } catch (const SingleClassError& e) {
      return PluginResponse::failure(e.what(), "single_class");
    } catch (const std::exception& e) {
      return PluginResponse::failure(e.what());
    }
  }

 private:
  PluginResponse hello(const nlohmann::json& p) {
    if (p.value("protocol_version", 0) != kProtocolVersion)
      return PluginResponse::failure("unsupported protocol version");
    if (!p.contains("vocab_path")) return PluginResponse::failure("mock plugin needs vocab_path");
    spec_ = ClassifierSpec{};
    if (p.contains("classifier")) {
      auto c = p["classifier"];
      c["backend"] = "builtin-linear";
      spec_ = ClassifierSpec::from_json(c);
    }
    vocab_ = std::make_unique<Vocabulary>(Vocabulary::from_json(
        nlohmann::json::parse(read_file(p["vocab_path"].get<std::string>()))));
    const auto dim = p.value("embedding_dim", std::size_t{256});
    projection_ = std::make_unique<RandomProjection>(dim, p.value("projection_seed", std::uint64_t{0}));
    return PluginResponse::success({{"protocol_version", kProtocolVersion},
                                    {"embedding_dim", dim},
                                    {"name", "builtin-linear-mock"}});
  }

  PluginResponse train(const nlohmann::json& p) {
    if (p.contains("vocab_fingerprint") &&
        detail::parse_hex64(p["vocab_fingerprint"].get<std::string>()) != vocab_->fingerprint())
      return PluginResponse::failure("vocabulary fingerprint differs from the loaded vocabulary");
    auto [ids, texts, xs] = features(p);
    const auto ys_raw = p.at("labels").get<std::vector<int>>();
    std::vector<Label> ys(ys_raw.begin(), ys_raw.end());
    const auto batches = p.value("batch_sizes", std::vector<std::size_t>{});
    ClassifierSpec spec = spec_;
    spec.seed = p.at("seed").get<std::uint64_t>();
    const auto samples = make(ids, texts, xs);
    model_ = std::make_unique<LinearModel>(
        fit_linear(spec, samples, ys, vocab_->size(), batches, vocab_->fingerprint()));
    ++model_id_;
    return PluginResponse::success({{"model_id", model_id_}});
  }

  PluginResponse predict(const nlohmann::json& p) {
    if (!model_) return PluginResponse::failure("no trained model");
    if (p.contains("model_id") && p["model_id"].get<std::uint64_t>() != model_id_)
      return PluginResponse::failure("unknown model_id");
    auto [ids, texts, xs] = features(p);
    nlohmann::json probs = nlohmann::json::array();
    for (const auto& x : xs) {
      const auto pr = model_->proba(x);
      probs.push_back({pr[0], pr[1]});
    }
    return PluginResponse::success({{"probs", std::move(probs)}});
  }

  PluginResponse embed(const nlohmann::json& p) {
    auto [ids, texts, xs] = features(p);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& x : xs) rows.push_back(projection_->project(x));
    return PluginResponse::success({{"embeddings", std::move(rows)}});
  }

  struct Batch {
    std::vector<DocId> ids;
    std::vector<std::string> texts;
    std::vector<SparseVector> xs;
  };

  Batch features(const nlohmann::json& p) const {
    Batch b;
    b.ids = p.at("ids").get<std::vector<DocId>>();
    b.texts = p.at("texts").get<std::vector<std::string>>();
    if (b.ids.size() != b.texts.size()) throw ProtocolError("ids and texts differ in length");
    b.xs = transform_all(b.texts, *vocab_);
    return b;
  }

  static std::vector<Sample> make(const std::vector<DocId>& ids,
                                  const std::vector<std::string>& texts,
                                  const std::vector<SparseVector>& xs) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], texts[i], &xs[i]});
    return out;
  }

  static std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  ClassifierSpec spec_;
  std::unique_ptr<Vocabulary> vocab_;
  std::unique_ptr<RandomProjection> projection_;
  std::unique_ptr<LinearModel> model_;
  std::uint64_t model_id_ = 0;
};

/// Request loop for a plugin executable. Returns after shutdown or EOF.
template <class Handler>
int serve_plugin(std::istream& in, std::ostream& out, Handler& handler) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    PluginResponse resp;
    bool stop = false;
    try {
      const auto req = decode_request(line);
      resp = handler.handle(req);
      stop = req.cmd == "shutdown";
    } catch (const std::exception& e) {
      resp = PluginResponse::failure(e.what());
    }
    out << encode_response(resp);
    out.flush();
    if (stop) break;
  }
  return 0;
}

}  // namespace alsim
