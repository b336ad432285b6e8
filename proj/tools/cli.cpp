#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "attrcenter/losses/gradient_suite.hpp"
#include "attrcenter/synth/png_io.hpp"
#include "config.hpp"

namespace attrcenter::cli {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::uint64_t parse_seed(const std::string& text, const std::string& origin) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text.front() == '-') {
    throw ConfigError(origin + ": expected a non-negative integer seed, got '" + text + "'");
  }
  return v;
}

void require(const std::string& value, const std::string& flag, const std::string& command) {
  if (value.empty()) throw ConfigError(command + " needs " + flag);
}

std::vector<synth::Sample> load_dataset(const std::filesystem::path& manifest_path,
                                        const lattice::AttributeSchema& schema) {
  const auto manifest = synth::read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  synth::validate_manifest(manifest, schema, base);
  return synth::load_samples(manifest, base);
}

void print_ranks(std::ostream& out, const std::string& label, std::span<const std::size_t> ks,
                 std::span<const double> acc) {
  out << label;
  for (std::size_t i = 0; i < ks.size(); ++i) out << "  R" << ks[i] << ' ' << fixed(acc[i]);
  out << '\n';
}

struct Options {
  std::string config;
  std::optional<std::string> seed;
  std::string out;
  // synth
  std::optional<std::size_t> identities;
  std::string style;
  // train / eval
  std::string data;
  std::string trace;
  std::string checkpoint;
  std::string distractors;
  std::string protocol;
  std::optional<double> attr_noise;
  // gradcheck
  std::size_t points = 100;
  // cmc
  std::string report;
  std::optional<std::size_t> gallery_size;
};

AppConfig resolve_config(const Options& o) {
  AppConfig cfg = o.config.empty() ? AppConfig{} : load_config(o.config);
  if (o.seed) {
    cfg.set_seed(parse_seed(*o.seed, "--seed"));
  } else if (const char* env = std::getenv("ATTRCENTER_SEED"); env && *env) {
    cfg.set_seed(parse_seed(env, "ATTRCENTER_SEED"));
  }
  return cfg;
}

int cmd_synth(const Options& o, AppConfig cfg, std::ostream& out) {
  require(o.out, "--out <dir>", "synth");
  if (!o.style.empty()) {
    if (o.style != "a" && o.style != "b") throw ConfigError("--style: expected a or b");
    cfg.synth_unseen_style = o.style == "b";
  }
  const std::size_t n = o.identities.value_or(cfg.synth_identities);
  if (n == 0) throw ConfigError("--identities must be positive");
  const auto manifest = synth::generate_dataset(n, cfg.schema, cfg.seed(), o.out, cfg.render());
  out << "wrote " << manifest.rows.size() << " identities to " << (std::filesystem::path(o.out) / "manifest.csv").string()
      << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, const AppConfig& cfg, std::ostream& out) {
  require(o.data, "--data <manifest>", "train");
  require(o.out, "--out <checkpoint>", "train");
  const auto samples = load_dataset(o.data, cfg.schema);
  std::vector<synth::Sample> pool;
  if (cfg.train.pretrain_identities > 0) {
    pool = eval::pretrain_pool(cfg.train.pretrain_identities, cfg.schema, cfg.seed(), cfg.protocol.render);
  }
  std::vector<trainer::TraceRow> trace;
  const auto state = trainer::fit(cfg.schema, cfg.train, samples, pool, &trace);
  trainer::save_checkpoint(state, o.out);
  if (!o.trace.empty()) trainer::write_trace(o.trace, trace);
  out << "trained " << state.step << " steps on " << samples.size() << " identities";
  if (!trace.empty()) out << ", last loss " << fixed(trace.back().loss.total);
  out << "\nmin center distance^2 " << fixed(state.registry.min_pairwise_sq_distance()) << '\n';
  out << "checkpoint " << o.out << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, AppConfig cfg, std::ostream& out) {
  require(o.out, "--out <dir>", "eval");
  if (o.attr_noise) cfg.protocol.attr_noise = *o.attr_noise;
  if (!(cfg.protocol.attr_noise >= 0.0 && cfg.protocol.attr_noise <= 1.0)) {
    throw ConfigError("--attr-noise must be in [0, 1]");
  }
  const std::filesystem::path dir(o.out);
  const auto& ks = cfg.protocol.ks;

  if (!o.protocol.empty()) {
    if (!o.checkpoint.empty()) throw ConfigError("eval takes --protocol or --checkpoint, not both");
    const auto p = eval::parse_protocol(o.protocol);
    std::filesystem::create_directories(dir);
    const auto report = eval::run_protocol(p, cfg.protocol, cfg.train, cfg.schema);
    eval::write_protocol_csv(dir / "protocol.csv", report);
    out << eval::protocol_name(p) << " over " << report.folds.size() << " folds\n";
    for (std::size_t i = 0; i < ks.size(); ++i) {
      out << "  R" << ks[i] << ' ' << fixed(report.mean[i]) << " +- " << fixed(report.stddev[i]) << '\n';
    }
    out << "report " << (dir / "protocol.csv").string() << '\n';
    return kExitOk;
  }

  require(o.checkpoint, "--checkpoint <file> or --protocol <P1|P2|P3>", "eval");
  require(o.data, "--data <manifest>", "eval");
  const auto model = trainer::load_checkpoint(o.checkpoint, cfg.schema, cfg.train.margins);
  const auto probes = load_dataset(o.data, cfg.schema);
  std::vector<synth::Sample> gallery(probes);
  if (!o.distractors.empty()) {
    const auto extra = load_dataset(o.distractors, cfg.schema);
    gallery.insert(gallery.end(), extra.begin(), extra.end());
  }
  std::vector<std::size_t> combos;
  if (cfg.protocol.attr_noise > 0.0) {
    combos = eval::perturb_attributes(probes, cfg.schema, cfg.protocol.attr_noise, cfg.seed());
  }
  const auto report = eval::evaluate(model, cfg.train.use_attributes, gallery, {probes, combos});
  std::filesystem::create_directories(dir);
  eval::write_rank_csv(dir / "ranks.csv", report);
  eval::write_cmc_csv(dir / "cmc.csv", report.curve, ks);
  std::vector<double> acc;
  for (auto k : ks) acc.push_back(report.curve.at(k));
  print_ranks(out, std::to_string(probes.size()) + " probes, gallery " + std::to_string(report.gallery_size) + ':', ks,
              acc);
  out << "reports " << (dir / "ranks.csv").string() << ", " << (dir / "cmc.csv").string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o, const AppConfig& cfg, std::ostream& out) {
  losses::SuiteConfig sc;
  sc.points = o.points;
  if (sc.points == 0) throw ConfigError("--points must be positive");
  const auto rows = losses::loss_gradient_suite(cfg.seed(), sc);
  bool ok = true;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %7s %8s %12s  %s\n", "loss", "points", "skipped", "max_rel_err", "status");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %7zu %8zu %12s  %s\n", r.name.c_str(), r.points, r.kinks,
                  sci(r.max_rel_error).c_str(), r.passed ? "ok" : "FAIL");
    out << line;
    ok = ok && r.passed;
  }
  if (!o.out.empty()) {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw synth::IoError("cannot open " + o.out + " for writing");
    f << "loss,points,skipped,max_rel_error,passed\n";
    for (const auto& r : rows) {
      f << r.name << ',' << r.points << ',' << r.kinks << ',' << sci(r.max_rel_error) << ',' << (r.passed ? 1 : 0)
        << '\n';
    }
  }
  out << "tolerance " << sci(sc.tolerance) << ": " << (ok ? "all passed" : "FAILED") << '\n';
  return ok ? kExitOk : kExitFailure;
}

int cmd_cmc(const Options& o, std::ostream& out) {
  require(o.report, "--report <ranks.csv>", "cmc");
  const auto ranks = eval::read_rank_csv(o.report);
  const std::size_t n = o.gallery_size.value_or(ranks.size());
  const auto curve = eval::cmc_from_ranks(ranks, n);
  if (!o.out.empty()) {
    eval::write_cmc_csv(o.out, curve);
    out << "wrote " << n << " rows to " << o.out << '\n';
    return kExitOk;
  }
  out << "k,accuracy\n";
  for (std::size_t k = 1; k <= n; ++k) out << k << ',' << fixed(curve.at(k), 6) << '\n';
  return kExitOk;
}

int cmd_ablate(const Options& o, const AppConfig& cfg, std::ostream& out) {
  require(o.out, "--out <dir>", "ablate");
  const std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  const auto report = eval::ablate_attributes(cfg.protocol, cfg.train, cfg.schema, cfg.ablation_seeds);
  eval::write_ablation_csv(dir / "ablation.csv", report);
  const auto& ks = report.ks;
  std::vector<double> attr(ks.size(), 0.0), base(ks.size(), 0.0);
  for (const auto& row : report.rows) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      attr[i] += row.attribute.rank_k[i] / static_cast<double>(report.rows.size());
      base[i] += row.baseline.rank_k[i] / static_cast<double>(report.rows.size());
    }
  }
  out << report.rows.size() << " paired seeds\n";
  print_ranks(out, "attribute-centered", ks, attr);
  print_ranks(out, "contrastive only  ", ks, base);
  out << "report " << (dir / "ablation.csv").string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribute-centered sketch-photo embedding toolkit", "attrcenter"};
  app.fallthrough();
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON config file");
  app.add_option("--seed", o.seed, "Seed override (falls back to ATTRCENTER_SEED)");
  app.add_option("--out", o.out, "Output file or directory");

  auto* synth_cmd = app.add_subcommand("synth", "Render a synthetic sketch/photo dataset");
  synth_cmd->add_option("--identities", o.identities, "Number of identities");
  synth_cmd->add_option("--style", o.style, "Sketch style a or b");

  auto* train_cmd = app.add_subcommand("train", "Train the encoder pair and write a checkpoint");
  train_cmd->add_option("--data", o.data, "Dataset manifest");
  train_cmd->add_option("--trace", o.trace, "Loss trace CSV");

  auto* eval_cmd = app.add_subcommand("eval", "Rank probes against a gallery or run a protocol");
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  eval_cmd->add_option("--data", o.data, "Probe manifest; its photos form the gallery");
  eval_cmd->add_option("--distractors", o.distractors, "Extra gallery manifest");
  eval_cmd->add_option("--protocol", o.protocol, "P1, P2 or P3");
  eval_cmd->add_option("--attr-noise", o.attr_noise, "Probe attribute flip probability");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  grad_cmd->add_option("--points", o.points, "Random points per loss");

  auto* cmc_cmd = app.add_subcommand("cmc", "CMC curve from a rank report");
  cmc_cmd->add_option("--report", o.report, "probe_id,rank_of_mate CSV");
  cmc_cmd->add_option("--gallery-size", o.gallery_size, "Gallery size (default: number of probes)");

  auto* ablate_cmd = app.add_subcommand("ablate", "Paired attribute vs contrastive-only runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitInvalid;
  }

  try {
    const AppConfig cfg = resolve_config(o);
    if (synth_cmd->parsed()) return cmd_synth(o, cfg, out);
    if (train_cmd->parsed()) return cmd_train(o, cfg, out);
    if (eval_cmd->parsed()) return cmd_eval(o, cfg, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(o, cfg, out);
    if (cmc_cmd->parsed()) return cmd_cmc(o, out);
    if (ablate_cmd->parsed()) return cmd_ablate(o, cfg, out);
    err << app.help();
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace attrcenter::cli
