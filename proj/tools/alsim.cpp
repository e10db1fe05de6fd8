// Command-line front end: synth, prepare, run, summarize, crosseval.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "alsim/runner.hpp"

namespace {

struct GridFlags {
  std::string config;
  std::size_t workers = 0;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::vector<std::string> overrides;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "grid config file (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--workers", workers, "concurrent runs");
    cmd->add_option("--seed", seeds, "rng seed(s), replacing the config's list");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--set", overrides, "override a config value: /json/pointer=value");
  }

  alsim::GridConfig load() const {
    nlohmann::json j = config.empty() ? nlohmann::json::object() : alsim::load_config_json(config);
    alsim::apply_overrides(j, overrides);
    if (!seeds.empty()) j["grid"]["seeds"] = seeds;
    if (!out.empty()) j["output_dir"] = out;
    if (workers) j["workers"] = workers;
    return alsim::grid_from_json(j);
  }
};

int cmd_synth(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> size, std::optional<double> imbalance,
              const std::string& keywords) {
  alsim::SyntheticSpec spec;
  if (!spec_path.empty())
    spec = alsim::SyntheticSpec::from_json(nlohmann::json::parse(alsim::read_text_file(spec_path)));
  if (seed) spec.seed = *seed;
  if (size) spec.size = *size;
  if (imbalance) spec.imbalance = *imbalance;
  const auto lexicon = keywords.empty() ? alsim::default_keywords() : alsim::load_keyword_list(keywords);
  const auto docs = alsim::generate_synthetic_corpus(spec, lexicon);
  std::string body;
  std::size_t abuse = 0;
  for (const auto& d : docs) {
    body += nlohmann::json{{"id", d.id}, {"text", d.text}, {"label", int(d.label)}}.dump() + "\n";
    abuse += d.label == alsim::kAbuse;
  }
  alsim::write_text_file(out, body);
  std::cout << "wrote " << docs.size() << " documents (" << abuse << " abusive) to " << out << "\n";
  return 0;
}

int cmd_prepare(const alsim::GridConfig& grid) {
  const auto keywords = alsim::grid_keywords(grid);
  alsim::DatasetCache cache(grid, keywords);
  for (const auto& d : grid.datasets)
    for (double imb : grid.imbalances) {
      const auto& p = cache.get(d.id, imb);
      alsim::write_dataset_files(grid.output_dir, p);
      const auto path = alsim::dataset_dir(grid.output_dir, d.id, imb) / "rebalanced.jsonl";
      alsim::save_rebalanced_jsonl(cache.rebalanced(d.id, imb), path);
      const auto m = alsim::dataset_manifest(p);
      std::cout << d.id << " @ " << alsim::format_double(imb) << ": train "
                << m["pool_abuse"] << "/" << p.pool_ids.size() - m["pool_abuse"].get<std::size_t>()
                << ", test " << m["test_abuse"] << "/"
                << p.test_ids.size() - m["test_abuse"].get<std::size_t>() << " (abuse/non-abuse), "
                << p.vocab->size() << " features -> " << path.string() << "\n";
    }
  return 0;
}

void print_summary(const std::vector<alsim::ExperimentSummary>& rows) {
  for (const auto& e : rows) {
    const auto& c = e.config;
    const auto& s = e.summary;
    std::cout << c["dataset"].get<std::string>() << " " << alsim::format_double(c["imbalance"].get<double>())
              << " " << c["classifier"]["name"].get<std::string>() << " "
              << c["query_strategy"].get<std::string>() << " " << c["cold_strategy"].get<std::string>()
              << ": F1_20k=" << (e.f1_20k ? alsim::format_fixed(*e.f1_20k, 3) : "-")
              << " F1_AL=" << (s.f1_al ? alsim::format_fixed(s.f1_al->mean, 3) : "-")
              << " N_90=" << (s.n90 ? std::to_string(*s.n90) : std::string("not reached"));
    if (s.n_failed) std::cout << " (" << s.failure_note() << ")";
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pool-based active-learning simulation harness"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus (JSONL)");
  std::string synth_spec, synth_out = "synthetic.jsonl", synth_keywords;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_size;
  std::optional<double> synth_imbalance;
  synth->add_option("--config", synth_spec, "synthetic spec (JSON)")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output file");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--size", synth_size, "number of documents");
  synth->add_option("--imbalance", synth_imbalance, "abuse fraction");
  synth->add_option("--keywords", synth_keywords, "keyword list file")->check(CLI::ExistingFile);

  GridFlags prepare_flags, run_flags, cross_flags;
  auto* prepare = app.add_subcommand("prepare", "build rebalanced datasets");
  prepare_flags.add(prepare);
  auto* run = app.add_subcommand("run", "execute an experiment grid");
  run_flags.add(run);
  bool quiet = false;
  run->add_flag("--quiet", quiet, "no per-run progress lines");
  auto* crosseval = app.add_subcommand("crosseval", "train on one dataset, test on another");
  cross_flags.add(crosseval);

  auto* summarize = app.add_subcommand("summarize", "recompute summaries from written curves");
  std::string summarize_dir = "outputs";
  bool strict = false;
  summarize->add_option("--out,dir", summarize_dir, "grid output directory")->check(CLI::ExistingDirectory);
  summarize->add_flag("--strict-n90", strict, "N_90 requires F1 strictly above the threshold");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth)
      return cmd_synth(synth_spec, synth_out, synth_seed, synth_size, synth_imbalance, synth_keywords);
    if (*prepare) return cmd_prepare(prepare_flags.load());
    if (*run) {
      const auto grid = run_flags.load();
      alsim::GridProgress progress;
      if (!quiet) progress.log = &std::cerr;
      const auto rows = alsim::run_grid(grid, progress);
      print_summary(rows);
      std::cout << "summary: " << (grid.output_dir / "summary.csv").string() << "\n";
      return 0;
    }
    if (*crosseval) {
      const auto grid = cross_flags.load();
      alsim::GridProgress progress{&std::cerr};
      const auto rows = alsim::run_crosseval(grid, progress);
      for (const auto& e : rows) {
        std::cout << e.train << " -> " << e.test << " "
                  << alsim::format_double(e.config["imbalance"].get<double>()) << " "
                  << e.config["query_strategy"].get<std::string>() << ": out-of-domain final F1 "
                  << (e.out_of_domain.curve.empty()
                          ? std::string("-")
                          : alsim::format_fixed(e.out_of_domain.curve.back().f1.mean, 3))
                  << "\n";
      }
      std::cout << "summary: " << (grid.output_dir / "crosseval.csv").string() << "\n";
      return 0;
    }
    if (*summarize) {
      print_summary(alsim::summarize_outputs(summarize_dir, strict));
      if (std::filesystem::exists(std::filesystem::path(summarize_dir) / "crosseval"))
        alsim::summarize_crosseval(summarize_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
