#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include <mzgle/pipeline.hpp>

namespace {

int run_compare(const std::string& a_path, const std::string& b_path, const std::string& col_a, const std::string& col_b,
                double max_sup, double max_l2, double max_z, const std::string& out) {
  using namespace mzgle;
  auto ta = read_table(a_path), tb = read_table(b_path);
  auto pick = [](const Table& t, const std::string& c) {
    if (!c.empty()) return c;
    if (t.columns.size() < 2) throw ValidationError("table needs a time column and a value column");
    return t.columns[1];
  };
  const std::string ca = pick(ta, col_a), cb = pick(tb, col_b.empty() ? col_a : col_b);
  auto a = table_series(ta, "t", ca, "stderr");
  auto b = table_series(tb, "t", cb, "stderr");
  auto r = compare_series(a, b);
  json report = {{"a", a_path}, {"b", b_path}, {"column_a", ca}, {"column_b", cb}, {"points", r.points}, {"sup", r.sup}, {"l2", r.l2}};
  report["max_z"] = r.have_z ? json(r.max_z) : json(nullptr);
  bool fail = false;
  json exceeded = json::array();
  auto check = [&](const char* name, double value, double limit) {
    if (limit >= 0 && value > limit) {
      fail = true;
      exceeded.push_back(name);
    }
  };
  check("sup", r.sup, max_sup);
  check("l2", r.l2, max_l2);
  if (r.have_z) check("z", r.max_z, max_z);
  report["thresholds"] = {{"sup", max_sup}, {"l2", max_l2}, {"z", max_z}};
  report["exceeded"] = exceeded;
  report["pass"] = !fail;
  if (!out.empty()) write_json_file(out, report);
  std::cout << report.dump(2) << "\n";
  return fail ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mori-Zwanzig memory kernels, GLE correlations and KL sampling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("mzgle ") + mzgle::kToolVersion);
  long threads = 0;
  app.add_option("--threads", threads, "Worker cap (default: MZGLE_THREADS or all cores)")->check(CLI::NonNegativeNumber);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Experiment config (JSON)");
    sub->add_option("--set", overrides, "Override a config key: section.key=value")->allow_extra_args(false)->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  };
  auto* kernel = app.add_subcommand("kernel", "Gamma, mu, expansion coefficients and K(t)");
  auto* correlate = app.add_subcommand("correlate", "Correlation function from the memory kernel");
  auto* mc = app.add_subcommand("mc", "Monte-Carlo autocorrelations of the chain");
  auto* kl = app.add_subcommand("kl", "KL decomposition and sampled-path autocorrelations");
  for (auto* s : {kernel, correlate, mc, kl}) add_common(s);

  auto* compare = app.add_subcommand("compare", "Compare two tabulated series");
  std::string file_a, file_b, col_a, col_b, report_out;
  double max_sup = -1, max_l2 = -1, max_z = -1;
  compare->add_option("a", file_a, "First table")->required();
  compare->add_option("b", file_b, "Second table")->required();
  compare->add_option("--column", col_a, "Value column (default: second column)");
  compare->add_option("--column-b", col_b, "Value column of the second table (default: --column)");
  compare->add_option("--max-sup", max_sup, "Fail (exit 1) above this sup-norm difference");
  compare->add_option("--max-l2", max_l2, "Fail (exit 1) above this L2 difference");
  compare->add_option("--max-z", max_z, "Fail (exit 1) above this per-point z-score");
  compare->add_option("--report", report_out, "Write the report to this JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) mzgle::set_thread_count(static_cast<unsigned>(threads));
    if (compare->parsed()) return run_compare(file_a, file_b, col_a, col_b, max_sup, max_l2, max_z, report_out);
    auto cfg = mzgle::load_config(config_path, overrides);
    if (threads == 0 && cfg.threads > 0) mzgle::set_thread_count(static_cast<unsigned>(cfg.threads));
    mzgle::RunManifest m;
    if (kernel->parsed()) m = mzgle::cmd_kernel(cfg);
    else if (correlate->parsed()) m = mzgle::cmd_correlate(cfg);
    else if (mc->parsed()) m = mzgle::cmd_mc(cfg);
    else m = mzgle::cmd_kl(cfg);
    std::cerr << m.command << ": wrote " << m.files.size() << " files to " << cfg.output_dir << "\n";
    return 0;
  } catch (const mzgle::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mzgle::exit_code(e.kind());
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
