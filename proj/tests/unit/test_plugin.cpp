#include <gtest/gtest.h>

#include <sstream>

#include "alsim/plugin.hpp"
#include "alsim/runner.hpp"
#include "support.hpp"

using namespace alsim;
using alsim::testing::TempDir;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Wire format

TEST(Protocol, RequestRoundTripForEveryCommand) {
  const std::vector<PluginRequest> requests = {
      {"hello", {{"protocol_version", 1}, {"embedding_dim", 8}, {"options", json::object()}}},
      {"train",
       {{"ids", {3, 1}}, {"texts", {"a \"quoted\"\nline", "\xc3\xa9t\xc3\xa9"}}, {"labels", {1, 0}},
        {"batch_sizes", {2}}, {"seed", 18446744073709551615ull}}},
      {"predict", {{"ids", {1}}, {"texts", {"x"}}, {"model_id", 4}}},
      {"embed", {{"ids", json::array()}, {"texts", json::array()}}},
      {"reset", json::object()},
      {"shutdown", json::object()}};
  for (const auto& r : requests) {
    const auto line = encode_request(r);
    ASSERT_EQ(line.back(), '\n');
    EXPECT_EQ(line.find('\n'), line.size() - 1) << "one line per message";
    EXPECT_EQ(decode_request(line), r) << line;
    const auto j = json::parse(line);
    EXPECT_EQ(j["v"], 1);
    EXPECT_EQ(j["cmd"], r.cmd);
  }
}

TEST(Protocol, ResponseRoundTrip) {
  const std::vector<PluginResponse> responses = {
      PluginResponse::success({{"protocol_version", 1}, {"embedding_dim", 768}, {"name", "m"}}),
      PluginResponse::success({{"model_id", 2}}),
      PluginResponse::success({{"probs", {{0.25, 0.75}, {1.0, 0.0}}}}),
      PluginResponse::success({{"embeddings", {{0.1, -0.2}, {1e-300, 3.5}}}}),
      PluginResponse::success(),
      PluginResponse::failure("labels contain one class", "single_class"),
      PluginResponse::failure("out of memory")};
  for (const auto& r : responses) {
    const auto line = encode_response(r);
    EXPECT_EQ(decode_response(line), r) << line;
    const auto j = json::parse(line);
    EXPECT_EQ(j["v"], 1);
    EXPECT_EQ(j["ok"], r.ok);
    EXPECT_EQ(j.contains("error"), !r.ok);
  }
}

TEST(Protocol, DoublesSurviveExactly) {
  std::vector<double> v = {0.1, 1.0 / 3.0, 2.0 / 3.0, 1e-17, 0.9999999999999999, 5e-324};
  const auto r = PluginResponse::success({{"probs", {{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}}}});
  const auto back = decode_response(encode_response(r));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      EXPECT_EQ(back.body["probs"][i][k].get<double>(), v[2 * i + k]);
}

TEST(Protocol, MalformedMessagesRejected) {
  EXPECT_THROW(decode_request("not json\n"), ProtocolError);
  EXPECT_THROW(decode_request("[1,2]\n"), ProtocolError);
  EXPECT_THROW(decode_request(R"({"cmd":"hello","payload":{}})"), ProtocolError);
  EXPECT_THROW(decode_request(R"({"v":"1","cmd":"hello"})"), ProtocolError);
  EXPECT_THROW(decode_request(R"({"v":2,"cmd":"hello","payload":{}})"), ProtocolError);
  EXPECT_THROW(decode_request(R"({"v":1,"cmd":"fit","payload":{}})"), ProtocolError);
  EXPECT_THROW(decode_request(R"({"v":1,"payload":{}})"), ProtocolError);
  EXPECT_THROW(decode_request(R"({"v":1,"cmd":"reset","payload":[]})"), ProtocolError);
  EXPECT_THROW(decode_request(R"({"v":1,"cmd":"reset","extra":0})"), ProtocolError);
  EXPECT_THROW(decode_request("{\"v\":1,\n\"cmd\":\"reset\"}\n"), ProtocolError);
  EXPECT_THROW(decode_response(R"({"v":1})"), ProtocolError);
  EXPECT_THROW(decode_response(R"({"v":1,"ok":false})"), ProtocolError);
  EXPECT_THROW(decode_response(R"({"v":0,"ok":true})"), ProtocolError);
  EXPECT_THROW(encode_request({"train", json::array()}), ProtocolError);
  EXPECT_THROW(encode_request({"bogus", json::object()}), ProtocolError);
  EXPECT_THROW(encode_response(PluginResponse::success({{"ok", false}})), ProtocolError);
}

TEST(Protocol, PayloadOptionalOnRequests) {
  const auto r = decode_request(R"({"v":1,"cmd":"reset"})");
  EXPECT_EQ(r.cmd, "reset");
  EXPECT_TRUE(r.payload.is_object());
  EXPECT_TRUE(r.payload.empty());
}

TEST(Protocol, InvalidUtf8IsReplacedNotFatal) {
  const PluginRequest r{"embed", {{"ids", {1}}, {"texts", {std::string("bad \xff byte")}}}};
  const auto back = decode_request(encode_request(r));
  EXPECT_NE(back.payload["texts"][0].get<std::string>().find("bad "), std::string::npos);
}

TEST(Protocol, ServeLoopAnswersEveryLineAndStopsOnShutdown) {
  struct Echo {
    PluginResponse handle(const PluginRequest& r) { return PluginResponse::success({{"cmd", r.cmd}}); }
  } echo;
  std::istringstream in(encode_request({"reset", json::object()}) + "garbage\n\n" +
                        encode_request({"shutdown", json::object()}) +
                        encode_request({"reset", json::object()}));
  std::ostringstream out;
  serve_plugin(in, out, echo);
  std::istringstream lines(out.str());
  std::vector<PluginResponse> got;
  for (std::string l; std::getline(lines, l);) got.push_back(decode_response(l));
  ASSERT_EQ(got.size(), 3u);
  EXPECT_TRUE(got[0].ok);
  EXPECT_FALSE(got[1].ok);
  EXPECT_EQ(got[2].body["cmd"], "shutdown");
}

TEST(Protocol, HexFingerprints) {
  for (std::uint64_t v : {0ull, 1ull, 0xdeadbeefull, ~0ull})
    EXPECT_EQ(detail::parse_hex64(detail::hex64(v)), v);
  EXPECT_EQ(detail::hex64(255), "00000000000000ff");
  EXPECT_THROW(detail::parse_hex64("xyz"), ProtocolError);
  EXPECT_THROW(detail::parse_hex64(""), ProtocolError);
}

// ---------------------------------------------------------------------------
// Reference server in-process

namespace {

struct ServerFixture {
  TempDir dir{"srv"};
  Vocabulary vocab;
  BuiltinPluginServer server;

  ServerFixture() {
    vocab = fit_tfidf(std::vector<std::string>{"you idiot", "nice day", "idiot idiot", "lovely day"},
                      TfidfOptions{});
    write_text_file(dir / "vocab.json", vocab.to_json().dump());
  }
  PluginResponse send(const std::string& cmd, json payload) {
    return decode_response(encode_response(server.handle({cmd, std::move(payload)})));
  }
  PluginResponse hello() {
    return send("hello", {{"protocol_version", 1},
                          {"embedding_dim", 16},
                          {"vocab_path", (dir / "vocab.json").string()}});
  }
};

}  // namespace

TEST(ReferenceServer, HelloReportsVersionAndDimension) {
  ServerFixture f;
  EXPECT_FALSE(f.send("train", {}).ok) << "commands before hello fail";
  const auto r = f.hello();
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_EQ(r.body["protocol_version"], 1);
  EXPECT_EQ(r.body["embedding_dim"], 16);
  EXPECT_FALSE(f.send("hello", {{"protocol_version", 2}}).ok);
}

TEST(ReferenceServer, TrainPredictEmbedReset) {
  ServerFixture f;
  ASSERT_TRUE(f.hello().ok);
  const json texts = {"you idiot", "nice day", "idiot idiot", "lovely day"};
  const json ids = {0, 1, 2, 3};
  const auto t = f.send("train", {{"ids", ids}, {"texts", texts}, {"labels", {1, 0, 1, 0}},
                                  {"batch_sizes", {4}}, {"seed", 1},
                                  {"vocab_fingerprint", detail::hex64(f.vocab.fingerprint())}});
  ASSERT_TRUE(t.ok) << t.error;
  const auto id = t.body["model_id"];
  const auto p = f.send("predict", {{"ids", ids}, {"texts", texts}, {"model_id", id}});
  ASSERT_TRUE(p.ok) << p.error;
  ASSERT_EQ(p.body["probs"].size(), 4u);
  for (const auto& pair : p.body["probs"]) {
    EXPECT_NEAR(pair[0].get<double>() + pair[1].get<double>(), 1.0, 1e-6);
  }
  EXPECT_GT(p.body["probs"][0][1].get<double>(), p.body["probs"][1][1].get<double>());

  const auto e = f.send("embed", {{"ids", {5}}, {"texts", {"unseen words only"}}});
  ASSERT_TRUE(e.ok);
  EXPECT_EQ(e.body["embeddings"][0].size(), 16u);

  EXPECT_FALSE(f.send("predict", {{"ids", ids}, {"texts", texts}, {"model_id", 99}}).ok);
  EXPECT_TRUE(f.send("reset", json::object()).ok);
  EXPECT_FALSE(f.send("predict", {{"ids", ids}, {"texts", texts}}).ok);
}

TEST(ReferenceServer, SingleClassAndFingerprintErrors) {
  ServerFixture f;
  ASSERT_TRUE(f.hello().ok);
  const auto single = f.send("train", {{"ids", {0, 1}}, {"texts", {"a", "b"}}, {"labels", {0, 0}},
                                       {"seed", 1}});
  EXPECT_FALSE(single.ok);
  EXPECT_EQ(single.body["error_kind"], "single_class");
  const auto fp = f.send("train", {{"ids", {0, 1}}, {"texts", {"a", "b"}}, {"labels", {0, 1}},
                                   {"seed", 1}, {"vocab_fingerprint", "0000000000000001"}});
  EXPECT_FALSE(fp.ok);
  const auto len = f.send("embed", {{"ids", {0, 1}}, {"texts", {"a"}}});
  EXPECT_FALSE(len.ok);
}

// ---------------------------------------------------------------------------
// Child process handling

namespace {

ClassifierSpec plugin_spec(std::vector<std::string> cmd, double timeout_seconds = 5.0) {
  ClassifierSpec s;
  s.name = "plugin";
  s.backend = Backend::kExternalPlugin;
  s.plugin_command = std::move(cmd);
  s.plugin_options = {{"timeout_seconds", timeout_seconds}};
  return s;
}

}  // namespace

TEST(PluginProcessTest, MissingExecutableFails) {
  EXPECT_THROW(PluginLearner(plugin_spec({"/nonexistent/plugin-binary"}), {}), PluginError);
}

TEST(PluginProcessTest, CrashBeforeReplyFails) {
  EXPECT_THROW(PluginLearner(plugin_spec({"sh", "-c", "read line; exit 3"}), {}), PluginError);
}

TEST(PluginProcessTest, SilentPluginTimesOut) {
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(PluginLearner(plugin_spec({"sh", "-c", "exec sleep 30"}, 0.3), {}), PluginError);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(10));
}

TEST(PluginProcessTest, GarbageAndWrongVersionAreProtocolErrors) {
  EXPECT_THROW(PluginLearner(plugin_spec({"sh", "-c", "read line; echo hi there"}), {}),
               ProtocolError);
  EXPECT_THROW(
      PluginLearner(plugin_spec({"sh", "-c", R"(read line; echo '{"v":2,"ok":true}')"}), {}),
      ProtocolError);
}

TEST(PluginProcessTest, HelloWithoutMatchingVersionRejected) {
  EXPECT_THROW(PluginLearner(plugin_spec({"sh", "-c",
                                          R"(read line; echo '{"v":1,"ok":true,"protocol_version":3,"embedding_dim":4}')"}),
                             {}),
               PluginError);
}

TEST(PluginProcessTest, RemoteErrorSurfaces) {
  EXPECT_THROW(
      PluginLearner(plugin_spec({"sh", "-c", R"(read line; echo '{"v":1,"ok":false,"error":"no gpu"}')"}),
                    {}),
      PluginError);
}

#ifdef ALSIM_MOCK_PLUGIN

TEST(MockPlugin, LearnerContract) {
  TempDir dir("mock");
  const std::vector<std::string> texts = {"you idiot", "nice day", "idiot idiot", "lovely day"};
  const auto vocab = fit_tfidf(texts, TfidfOptions{});
  write_text_file(dir / "vocab.json", vocab.to_json().dump());
  const auto xs = transform_all(texts, vocab);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < texts.size(); ++i) samples.push_back({DocId(i), texts[i], &xs[i]});
  const std::vector<Label> ys = {kAbuse, kNonAbuse, kAbuse, kNonAbuse};
  const std::vector<std::size_t> batches = {4};

  PluginSettings settings;
  settings.embedding_dim = 12;
  settings.vocab_path = dir / "vocab.json";
  PluginLearner learner(plugin_spec({ALSIM_MOCK_PLUGIN}), settings);
  EXPECT_EQ(learner.embedding_dim(), 12u);
  const auto model = learner.fit(samples, ys, batches, vocab);
  const auto probs = model->predict_proba(samples);
  ASSERT_EQ(probs.size(), 4u);
  for (const auto& p : probs) EXPECT_NEAR(p[0] + p[1], 1.0, 1e-6);

  LinearLearner native(ClassifierSpec{});
  const auto nm = native.fit(samples, ys, batches, vocab);
  const auto np = nm->predict_proba(samples);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(probs[i], np[i]);
  EXPECT_EQ(model->fingerprint(), nm->fingerprint());

  const auto emb = learner.embed(samples);
  ASSERT_EQ(emb.size(), 4u);
  for (const auto& e : emb) EXPECT_EQ(e.size(), 12u);

  const std::vector<Label> one = {kAbuse, kAbuse, kAbuse, kAbuse};
  EXPECT_THROW(learner.fit(samples, one, batches, vocab), SingleClassError);

  const auto second = learner.fit(samples, ys, batches, vocab);
  EXPECT_THROW(model->predict_proba(samples), PluginError) << "superseded model";
  EXPECT_NO_THROW(second->predict_proba(samples));
  learner.reset();
  EXPECT_THROW(second->predict_proba(samples), PluginError);
}

TEST(MockPlugin, CurvesBitwiseEqualToBuiltin) {
  TempDir dir("mock");
  const json grid = {
      {"datasets", json::array({{{"id", "toy"},
                                 {"synthetic", {{"size", 3000}, {"imbalance", 0.4}, {"seed", 3}}},
                                 {"pool_size", 700},
                                 {"test_size", 300}}})},
      {"grid",
       {{"imbalance", {0.5, 0.1}},
        {"classifiers",
         json::array({{{"name", "native"}},
                      {{"name", "mock"}, {"backend", "external-plugin"}, {"plugin_command", {ALSIM_MOCK_PLUGIN}}},
                      {{"name", "native-es"}, {"early_stopping", true}, {"validation_fraction", 0.2}},
                      {{"name", "mock-es"},
                       {"early_stopping", true},
                       {"validation_fraction", 0.2},
                       {"backend", "external-plugin"},
                       {"plugin_command", {ALSIM_MOCK_PLUGIN}}}})},
        {"query_strategy", {"least_confidence", "random", "greedy_coreset", "embedding_kmeans"}},
        {"budget", 170},
        {"seeds", {1, 2}}}},
      {"settings", {{"embedding_dim", 24}}},
      {"output_dir", dir.path().string()},
      {"workers", 4}};
  const auto res = run_grid(grid_from_json(grid));
  ASSERT_EQ(res.size(), 2u * 4 * 4);

  std::size_t compared = 0;
  for (const auto& pair : {std::pair{"native", "mock"}, std::pair{"native-es", "mock-es"}})
    for (const char* imb : {"0.5", "0.1"}) {
      const auto base = dir.path() / "toy" / imb;
      EXPECT_EQ(json::parse(read_text_file(base / pair.first / "passive.json"))["macro_f1"],
                json::parse(read_text_file(base / pair.second / "passive.json"))["macro_f1"]);
      for (const char* q : {"least_confidence", "random", "greedy_coreset", "embedding_kmeans"})
        for (const char* s : {"seed1", "seed2"}) {
          const auto rel = fs::path(q) / "heuristic-s20-b50" / s / "curve.jsonl";
          const auto a = read_text_file(base / pair.first / rel);
          const auto b = read_text_file(base / pair.second / rel);
          ASSERT_FALSE(a.empty());
          EXPECT_EQ(a, b) << (base / pair.second / rel);
          ++compared;
        }
    }
  EXPECT_EQ(compared, 32u);
}

#endif
