// Command-line front end: run one variant, sweep variants, or verify the
// pipeline against the reference implementation.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sowpic/metrics.hpp"
#include "sowpic/oracle.hpp"
#include "sowpic/pipeline.hpp"

using namespace sowpic;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string interp, deposit, comm, ranks;
  std::int64_t seed = -1;
  std::string deterministic, virtual_time;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "key = value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "extra key=value overrides, applied last");
  cmd->add_option("--interp", o.interp, "interpolation supply G0..G7");
  cmd->add_option("--deposit", o.deposit, "deposition mode D0..D3");
  cmd->add_option("--comm", o.comm, "communication mode C0..C4");
  cmd->add_option("--ranks", o.ranks, "rank grid, e.g. 2,2,2");
  cmd->add_option("--seed", o.seed, "workload seed");
  cmd->add_option("--deterministic", o.deterministic, "id-ordered merges (on/off)");
  cmd->add_option("--virtual-time", o.virtual_time, "virtual clock instead of wall time (on/off)");
}

SimulationConfig build_config(const CommonOptions& o) {
  SimulationConfig c = o.config_path.empty() ? SimulationConfig{} : load_config(o.config_path);
  if (!o.interp.empty()) apply_config_value(c, "interp", o.interp);
  if (!o.deposit.empty()) apply_config_value(c, "deposit", o.deposit);
  if (!o.comm.empty()) apply_config_value(c, "comm", o.comm);
  if (!o.ranks.empty()) apply_config_value(c, "ranks", o.ranks);
  if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.deterministic.empty()) apply_config_value(c, "deterministic", o.deterministic);
  if (!o.virtual_time.empty()) apply_config_value(c, "virtual_time", o.virtual_time);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  validate_variant(c.variant);
  build_geometry(c);
  return c;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
}

int cmd_run(const CommonOptions& o, const std::string& report_path) {
  const SimulationConfig c = build_config(o);
  pipeline::Simulation sim(c);
  const auto rep = sim.run(!report_path.empty());
  std::ostringstream csv;
  metrics::write_csv(csv, rep.steps, c.frequency_hz);
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    write_file(o.out, csv.str());
  }
  if (!report_path.empty()) write_file(report_path, metrics::conservation_report(rep.diagnostics).to_text());
  std::fprintf(stderr, "%s: %zu measured steps, T_steps %.6g s, PPS %.6g, CPP %.6g, checksum %016llx\n",
               to_string(c.variant).c_str(), rep.steps.size(), rep.t_steps, rep.throughput.pps, rep.throughput.cpp,
               static_cast<unsigned long long>(rep.checksum));
  return 0;
}

int cmd_ablate(const CommonOptions& o, const std::vector<std::string>& variants) {
  const SimulationConfig base = build_config(o);
  std::ostringstream csv;
  csv << "variant,ppc,u_th,steps,n_particles,t_steps,pps,cpp,t_interpolation,t_deposit,t_redistribute,"
         "t_sort,t_kernel,t_pack,t_wait,speedup_vs_first\n";
  double first = 0.0;
  std::vector<double> t_all;
  for (const auto& v : variants) {
    SimulationConfig c = base;
    apply_config_value(c, "variant", v);
    pipeline::Simulation sim(c);
    const auto rep = sim.run();
    metrics::StepMetrics mean;
    const double n = std::max<double>(1.0, static_cast<double>(rep.steps.size()));
    for (const auto& m : rep.steps) {
      mean.t_interpolation += m.t_interpolation / n;
      mean.t_deposit += m.t_deposit / n;
      mean.t_redistribute += m.t_redistribute / n;
      mean.t_sort += m.t_sort / n;
      mean.t_kernel += m.t_kernel / n;
      mean.t_pack += m.t_pack / n;
      mean.t_wait += m.t_wait / n;
    }
    if (first == 0.0) first = rep.t_steps;
    t_all.push_back(rep.t_steps);
    const std::int64_t np = rep.steps.empty() ? 0 : rep.steps.back().n_particles;
    char line[512];
    std::snprintf(line, sizeof line, "%s,%d,%.17g,%zu,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  to_string(c.variant).c_str(), c.ppc, c.u_th, rep.steps.size(), static_cast<long long>(np),
                  rep.t_steps, rep.throughput.pps, rep.throughput.cpp, mean.t_interpolation, mean.t_deposit,
                  mean.t_redistribute, mean.t_sort, mean.t_kernel, mean.t_pack, mean.t_wait,
                  rep.t_steps > 0.0 ? first / rep.t_steps : 0.0);
    csv << line;
    std::fprintf(stderr, "%-10s T_steps %.6g s\n", to_string(c.variant).c_str(), rep.t_steps);
  }
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    write_file(o.out, csv.str());
  }
  if (t_all.size() >= 2) {
    std::fprintf(stderr, "trend: last variant is %s than the first (%.3gx)\n",
                 t_all.back() < t_all.front() ? "faster" : "not faster", t_all.front() / t_all.back());
  }
  return 0;
}

// Verification ------------------------------------------------------------------

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

Check oracle_check(const SimulationConfig& base, const std::string& variant, int steps, double tol) {
  SimulationConfig c = base;
  apply_config_value(c, "variant", variant);
  pipeline::Simulation sim(c);
  oracle::OracleState ref = oracle::make_state(c, sim.particles());
  for (int s = 0; s < steps; ++s) {
    sim.step();
    oracle::reference_step(ref);
  }
  const auto rep =
      oracle::compare_states(sim.particles(), sim.gather_fields(), ref.particles, ref.fields, sim.geometry(), tol);
  char d[160];
  std::snprintf(d, sizeof d, "particles %.3g, fields %.3g, tolerance %.0e", rep.particle_max_error,
                rep.field_max_error, tol);
  return {"oracle " + variant + " x" + std::to_string(steps), rep.pass, d};
}

Check layout_check(const SimulationConfig& base, int steps) {
  SimulationConfig c = base;
  apply_config_value(c, "variant", "G7/D3/C2");
  pipeline::Simulation sim(c);
  std::vector<std::uint64_t> ids;
  for (const auto& p : sim.particles()) ids.push_back(p.id);
  std::int64_t violations = 0;
  std::string first;
  for (int s = 0; s < steps; ++s) {
    const auto before = pipeline::cell_map(sim);
    const auto m = sim.step();
    metrics::check_buckets(m);
    const auto rep = pipeline::audit(sim, ids, &before);
    violations += rep.violations;
    if (first.empty() && !rep.messages.empty()) first = rep.messages.front();
  }
  return {"layout invariants x" + std::to_string(steps), violations == 0,
          std::to_string(violations) + " violations" + (first.empty() ? "" : ": " + first)};
}

Check comm_check(const SimulationConfig& base, int steps) {
  std::uint64_t reference = 0;
  std::string detail;
  bool pass = true;
  for (const char* comm : {"C0", "C1", "C2", "C3", "C4"}) {
    SimulationConfig c = base;
    apply_config_value(c, "variant", std::string("G7/D3/") + comm);
    c.workload = Workload::MigrationSlab;
    c.drift = {0.2, 0.0, 0.0};
    pipeline::Simulation sim(c);
    for (int s = 0; s < steps; ++s) sim.step();
    const std::uint64_t h = sim.checksum();
    if (reference == 0) reference = h;
    pass = pass && h == reference;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%s=%08llx ", comm, static_cast<unsigned long long>(h & 0xffffffffu));
    detail += buf;
  }
  return {"communication modes bitwise x" + std::to_string(steps), pass, detail};
}

int cmd_verify(const CommonOptions& o, bool quick) {
  SimulationConfig base = build_config(o);
  base.warmup = 0;
  base.deterministic = true;
  if (quick) {
    base.n_cell = {16, 16, 16};
    base.ppc = 2;
    base.u_th = 0.05;
    if (base.ranks == Int3{1, 1, 1}) base.ranks = {2, 1, 1};
  }
  const int short_steps = quick ? 5 : 10;
  const int long_steps = quick ? 20 : 100;

  SimulationConfig one_rank = base;
  one_rank.ranks = {1, 1, 1};
  SimulationConfig many = base;
  if (many.ranks == Int3{1, 1, 1}) many.ranks = {2, 2, 2};

  std::vector<Check> checks;
  checks.push_back(oracle_check(one_rank, "G0/D0/C0", short_steps, 1e-12));
  checks.push_back(oracle_check(one_rank, "G7/D3/C2", 1, 1e-12));
  checks.push_back(oracle_check(many, "G7/D3/C2", long_steps, 1e-10));
  checks.push_back(layout_check(many, short_steps));
  checks.push_back(comm_check(many, short_steps));

  int failed = 0;
  for (const auto& ch : checks) {
    std::printf("%s  %-36s %s\n", ch.pass ? "PASS" : "FAIL", ch.name.c_str(), ch.detail.c_str());
    failed += ch.pass ? 0 : 1;
  }
  std::printf("%d of %zu checks failed\n", failed, checks.size());
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle-in-cell engine with sort-on-write layouts and overlapped migration"};
  app.require_subcommand(1);

  CommonOptions run_opts, ablate_opts, verify_opts;
  std::string report_path;
  auto* run = app.add_subcommand("run", "run one variant and write per-step metrics as CSV");
  add_common(run, run_opts);
  run->add_option("--out", run_opts.out, "CSV output path (stdout when omitted)");
  run->add_option("--report", report_path, "conservation report output path");

  std::vector<std::string> variants{"G0/D0/C0", "G7/D3/C2"};
  auto* ablate = app.add_subcommand("ablate", "run several variants and compare throughput");
  add_common(ablate, ablate_opts);
  ablate->add_option("--out", ablate_opts.out, "CSV output path (stdout when omitted)");
  ablate->add_option("--variants", variants, "variants as G?/D?/C?")->delimiter(',');

  bool quick = false;
  auto* verify = app.add_subcommand("verify", "check the pipeline against the reference and the layout audit");
  add_common(verify, verify_opts);
  verify->add_flag("--quick", quick, "reduced grid and step counts");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_opts, report_path);
    if (*ablate) return cmd_ablate(ablate_opts, variants);
    if (*verify) return cmd_verify(verify_opts, quick);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
