// Command-line front end: dataset preparation, training runs, the variant grid,
// ablations, checkpoint evaluation, synthetic-corpus generation, and a padding
// inspector. Config values come from --config files (key=value or JSON),
// repeatable --set key=value overrides, and a few dedicated flags.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "reppad/config.hpp"
#include "reppad/harness.hpp"
#include "reppad/synth.hpp"

using namespace reppad;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> dataset, out_dir, policy, backbone, precision;
  std::optional<uint64_t> seed;
  std::optional<int> threads, max_epochs;
};

void add_common(CLI::App* app, CommonOpts& o) {
  app->add_option("--config", o.config_path, "config file (key=value lines or JSON)")
      ->check(CLI::ExistingFile);
  app->add_option("--set", o.sets, "override, e.g. --set pad.m_rule=max (repeatable)");
  app->add_option("--dataset", o.dataset, "interaction TSV path");
  app->add_option("--out", o.out_dir, "output directory");
  app->add_option("--policy", o.policy, "zero | reppad | reppad_plus | augment");
  app->add_option("--backbone", o.backbone, "gru | sa");
  app->add_option("--precision", o.precision, "f32 | f64");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--threads", o.threads, "worker threads");
  app->add_option("--max-epochs", o.max_epochs, "training epoch cap");
}

ExperimentConfig build_config(const CommonOpts& o, bool need_seed) {
  std::map<std::string, std::string> kv;
  if (!o.config_path.empty()) kv = load_config_map(o.config_path);
  for (const auto& s : o.sets) apply_override(kv, s);
  auto put = [&](const char* k, const std::string& v) { kv[k] = v; };
  if (o.dataset) put("dataset", *o.dataset);
  if (o.out_dir) put("out_dir", *o.out_dir);
  if (o.policy) put("policy", *o.policy);
  if (o.backbone) put("backbone", *o.backbone);
  if (o.precision) put("precision", *o.precision);
  if (o.seed) put("seed", std::to_string(*o.seed));
  if (o.threads) put("threads", std::to_string(*o.threads));
  if (o.max_epochs) put("max_epochs", std::to_string(*o.max_epochs));
  ExperimentConfig cfg = config_from_map(kv);
  if (need_seed && !cfg.seed_set)
    throw std::invalid_argument("this command requires --seed (or seed= in the config)");
  return cfg;
}

void print_tables(const RunResult& r) {
  auto row = [](const char* split, const MetricTable& t) {
    std::printf("%-5s HR@5 %.4f  HR@10 %.4f  HR@20 %.4f  NDCG@5 %.4f  NDCG@10 %.4f  NDCG@20 %.4f\n",
                split, t.hr5, t.hr10, t.hr20, t.ndcg5, t.ndcg10, t.ndcg20);
  };
  row("valid", r.report.valid);
  row("test", r.report.test);
}

void print_items(const char* label, const std::vector<int32_t>& v) {
  std::printf("%-9s", label);
  for (int32_t x : v) std::printf(" %d", x);
  std::printf("\n");
}

int cmd_prepare(const CommonOpts& o) {
  ExperimentConfig cfg = build_config(o, false);
  PreparedData data = prepare_dataset(cfg);
  const std::string summary = corpus_summary_json(data.corpus);
  std::printf("%s\n", summary.c_str());
  std::fprintf(stderr, "raw records %lld, after %d-core %lld\n",
               static_cast<long long>(data.raw_records), cfg.kcore,
               static_cast<long long>(data.kept_records));
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream os(cfg.out_dir + "/corpus_summary.json", std::ios::binary);
    os << summary << '\n';
    if (!os) throw std::runtime_error("cannot write corpus summary");
  }
  return 0;
}

int cmd_train(const CommonOpts& o) {
  ExperimentConfig cfg = build_config(o, true);
  RunResult r = run_experiment(cfg);
  std::printf("run complete: policy %s, %d epochs (best %d), %lld samples/epoch, %.1fs train\n",
              r.policy_label.c_str(), r.epochs_run, r.best_epoch,
              static_cast<long long>(r.samples_per_epoch), r.total_train_seconds);
  print_tables(r);
  std::printf("artifacts in %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_grid(const CommonOpts& o) {
  ExperimentConfig cfg = build_config(o, true);
  GridResult g = run_variant_grid(cfg);
  std::printf("%s", g.csv.c_str());
  int failed = 0;
  for (const auto& c : g.cells)
    if (!c.ok) {
      ++failed;
      std::fprintf(stderr, "FAILED %s %s %s: %s\n", c.mode.c_str(), c.m_rule.c_str(),
                   c.delimiter.c_str(), c.error.c_str());
    }
  if (failed)
    std::fprintf(stderr, "%d of %zu cells failed; completed cells are in %s/grid.csv\n",
                 failed, g.cells.size(), cfg.out_dir.c_str());
  return failed ? 1 : 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& kind_str) {
  ExperimentConfig cfg = build_config(o, true);
  RunResult r = run_ablation(cfg, ablation_from_string(kind_str));
  std::printf("ablation %s complete: policy %s, %d epochs (best %d)\n", kind_str.c_str(),
              r.policy_label.c_str(), r.epochs_run, r.best_epoch);
  print_tables(r);
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt) {
  ExperimentConfig cfg = build_config(o, false);
  RunResult r = evaluate_checkpoint(cfg, ckpt);
  print_tables(r);
  return 0;
}

int cmd_synth(const SynthConfig& sc, const std::string& out_tsv, const std::string& meta) {
  SynthResult r = generate_synth(sc);
  write_interactions_tsv(r.records, out_tsv);
  std::printf("wrote %zu interactions for %d users over %d items to %s\n", r.records.size(),
              sc.num_users, sc.num_items, out_tsv.c_str());
  if (!meta.empty()) {
    std::ofstream os(meta, std::ios::binary);
    os << transitions_json(sc, r) << '\n';
    if (!os) throw std::runtime_error("cannot write " + meta);
    std::printf("transition metadata in %s\n", meta.c_str());
  }
  return 0;
}

int cmd_pad_debug(const std::string& items_csv, const std::string& policy,
                  const std::string& m_rule, int fix_k, bool no_delimiter, int max_len,
                  uint64_t seed) {
  std::vector<int32_t> items;
  std::stringstream ss(items_csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) items.push_back(std::stoi(tok));
  if (items.size() < 2)
    throw std::invalid_argument("--items needs at least two comma-separated item ids");

  PadPolicy pol;
  pol.mode = policy == "zero"          ? PadMode::zero
             : policy == "reppad"      ? PadMode::reppad
             : policy == "reppad_plus" ? PadMode::reppad_plus
                                       : throw std::invalid_argument("unknown policy " + policy);
  pol.m_rule = m_rule_from_string(m_rule);
  pol.fix_k = fix_k;
  pol.delimiter = !no_delimiter;
  pol.max_len = max_len;

  Rng rng = derive_stream(seed, "pad", 0, 0);
  auto s = make_training_sample(items, pol, rng);
  if (!s) {
    std::printf("sequence too short to form a training pair\n");
    return 0;
  }
  std::printf("policy %s  m_rule %s  fix_k %d  delimiter %s  max_len %d  seed %llu\n",
              policy.c_str(), m_rule.c_str(), fix_k, pol.delimiter ? "on" : "off", max_len,
              static_cast<unsigned long long>(seed));
  print_items("input", s->input);
  print_items("target", s->target);
  print_items("mask", std::vector<int32_t>(s->loss_mask.begin(), s->loss_mask.end()));
  print_items("segments", s->segment_starts);
  std::printf("copies    %d\n", s->pad_copies);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repeated-padding experiment toolkit"};
  app.require_subcommand(1);

  CommonOpts prep_o, train_o, grid_o, abl_o, eval_o;
  std::string abl_kind, eval_ckpt;

  add_common(app.add_subcommand("prepare", "ingest a TSV, apply k-core, report the corpus"),
             prep_o);
  add_common(app.add_subcommand("train", "one training run with full artifacts"), train_o);
  add_common(app.add_subcommand("grid", "zero baseline plus the 16 padding variants"), grid_o);
  CLI::App* abl = app.add_subcommand("ablate", "alpha | beta | gamma | leakage");
  abl->add_option("kind", abl_kind, "ablation kind")->required();
  add_common(abl, abl_o);
  CLI::App* ev = app.add_subcommand("eval", "evaluate a saved checkpoint");
  ev->add_option("--ckpt", eval_ckpt, "checkpoint path")->required()->check(CLI::ExistingFile);
  add_common(ev, eval_o);

  SynthConfig sc;
  std::string synth_out = "synth.tsv", synth_meta;
  CLI::App* sy = app.add_subcommand("synth", "generate a grouped-Markov interaction corpus");
  sy->add_option("--users", sc.num_users);
  sy->add_option("--items", sc.num_items);
  sy->add_option("--groups", sc.num_groups);
  sy->add_option("--branch", sc.branch);
  sy->add_option("--p-pref", sc.p_pref);
  sy->add_option("--noise", sc.noise);
  sy->add_option("--min-len", sc.min_len);
  sy->add_option("--mean-extra", sc.mean_extra);
  sy->add_option("--seq-cap", sc.max_len, "longest generated sequence");
  sy->add_option("--cand", sc.shared_candidates,
                 "per-item candidate-set size; >0 switches to the shared-vocabulary "
                 "mixture (groups overlap on items, preferences differ)");
  sy->add_option("--revisit", sc.revisit,
                 "chance per step of replaying an earlier item from the user's own "
                 "history (recurrent consumption)");
  sy->add_option("--seed", sc.seed);
  sy->add_option("--out", synth_out, "output TSV path");
  sy->add_option("--meta", synth_meta, "also write transition metadata JSON here");

  std::string pd_items, pd_policy = "reppad", pd_rule = "fix";
  int pd_fix = 1, pd_maxlen = 10;
  uint64_t pd_seed = 1;
  bool pd_nodelim = false;
  CLI::App* pd = app.add_subcommand("pad-debug", "print one padded training sample");
  pd->add_option("--items", pd_items, "comma-separated item ids, oldest first")->required();
  pd->add_option("--policy", pd_policy, "zero | reppad | reppad_plus");
  pd->add_option("--m-rule", pd_rule, "fix | max | rand_incl_zero | rand_from_one");
  pd->add_option("--fix-k", pd_fix);
  pd->add_flag("--no-delimiter", pd_nodelim);
  pd->add_option("--max-len", pd_maxlen);
  pd->add_option("--seed", pd_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("prepare")) return cmd_prepare(prep_o);
    if (app.got_subcommand("train")) return cmd_train(train_o);
    if (app.got_subcommand("grid")) return cmd_grid(grid_o);
    if (app.got_subcommand("ablate")) return cmd_ablate(abl_o, abl_kind);
    if (app.got_subcommand("eval")) return cmd_eval(eval_o, eval_ckpt);
    if (app.got_subcommand("synth")) return cmd_synth(sc, synth_out, synth_meta);
    if (app.got_subcommand("pad-debug"))
      return cmd_pad_debug(pd_items, pd_policy, pd_rule, pd_fix, pd_nodelim, pd_maxlen,
                           pd_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
