// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// non-zero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/helpers.hpp"
#include "sdmbart/ascii_grid.hpp"
#include "sdmbart/bart/prior.hpp"
#include "sdmbart/bart/sampler.hpp"
#include "sdmbart/eval/cross_validation.hpp"
#include "sdmbart/eval/interpretation.hpp"
#include "sdmbart/eval/metrics.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/pipeline/export.hpp"

using namespace sdm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// Oracles

/// Pair statistic: P(score_pos > score_neg) + 0.5 P(tie), by enumeration.
double mann_whitney(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Every distinct score as a threshold, J recomputed from scratch; the
/// smallest threshold wins ties.
std::pair<double, double> exhaustive_youden(const std::vector<int>& y, const std::vector<double>& s) {
  std::vector<double> cuts(s.begin(), s.end());
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double best_j = -2.0;
  double best_cut = 0.0;
  for (double c : cuts) {
    double tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool pred = s[i] >= c;
      if (y[i] == 1) (pred ? tp : fn) += 1;
      else (pred ? fp : tn) += 1;
    }
    const double j = tp / (tp + fn) + tn / (tn + fp) - 1.0;
    if (j > best_j) {
      best_j = j;
      best_cut = c;
    }
  }
  return {best_cut, best_j};
}

std::pair<std::vector<int>, std::vector<double>> random_scores(Rng& rng, std::size_t max_n) {
  const std::size_t n = 2 + rng.below(max_n - 1);
  std::vector<int> y(n);
  std::vector<double> s(n);
  const bool coarse = rng.uniform() < 0.5;  // many ties
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.uniform() < 0.4 ? 1 : 0;
    s[i] = coarse ? static_cast<double>(rng.below(8)) / 8.0 : rng.uniform() + 0.3 * y[i];
  }
  y[0] = 1;
  y[1] = 0;
  return {y, s};
}

// ---------------------------------------------------------------------------
// Criteria

Outcome auc_oracle() {
  Rng rng(101);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    auto [y, s] = random_scores(rng, 200);
    worst = std::max(worst, std::abs(eval::roc_auc(y, s).auc - mann_whitney(y, s)));
  }
  return {worst <= 1e-12, "max |AUC - U| = " + fmt(worst)};
}

Outcome youden_oracle() {
  Rng rng(202);
  std::size_t cutoff_mismatch = 0;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    auto [y, s] = random_scores(rng, 200);
    const auto got = eval::youden_cutoff(y, s);
    const auto [cut, j] = exhaustive_youden(y, s);
    if (got.cutoff != cut) ++cutoff_mismatch;
    const auto cm = eval::confusion_at(y, s, got.cutoff);
    const double recomputed = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn) +
                              static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp) - 1.0;
    worst = std::max({worst, std::abs(got.tss - recomputed), std::abs(got.tss - j)});
  }
  return {cutoff_mismatch == 0 && worst <= 1e-12,
          std::to_string(cutoff_mismatch) + " cutoff mismatches, max |TSS diff| = " + fmt(worst)};
}

Outcome leaf_posterior_oracle() {
  Rng rng(303);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = rng.below(500);
    const double sum = (rng.uniform() - 0.5) * 2.0 * static_cast<double>(n + 1);
    const double sigma_mu = 0.01 + rng.uniform() * 2.0;
    // Normal prior N(0, s^2) with n unit-variance observations summing to `sum`.
    const double prior_precision = 1.0 / (sigma_mu * sigma_mu);
    const double post_precision = prior_precision + static_cast<double>(n);
    const double want_var = 1.0 / post_precision;
    const double want_mean = sum / post_precision;
    const auto got = bart::leaf_posterior(sum, n, sigma_mu);
    worst = std::max({worst, std::abs(got.mean - want_mean), std::abs(got.variance - want_var)});
  }
  return {worst <= 1e-10, "max abs error " + fmt(worst)};
}

Outcome probit_oracle() {
  double worst = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double x = -8.0 + 16.0 * static_cast<double>(i) / (n - 1);
    const double want = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    worst = std::max(worst, std::abs(bart::normal_cdf(x) - want));
  }
  return {worst <= 1e-12, "max abs error " + fmt(worst)};
}

Outcome tree_prior_depth() {
  bart::SamplerConfig cfg;
  cfg.trees = 1;
  const bart::CutpointGrid grid({{0.0, 1.0}}, 100);
  const bart::TrainingView none{};
  const std::size_t trees = 10000;
  const std::size_t steps = 200;
  std::map<std::size_t, double> mcmc;
  for (std::size_t c = 0; c < trees; ++c) {
    Rng rng(derive_seed(404, c));
    bart::TreeState s;
    for (std::size_t k = 0; k < steps; ++k) bart::mcmc_tree_step(s, none, {}, grid, cfg, rng);
    mcmc[s.tree.max_depth()] += 1.0 / trees;
  }
  std::map<std::size_t, double> direct;
  Rng rng(405);
  for (std::size_t i = 0; i < trees; ++i) {
    std::vector<std::size_t> open{0};
    std::size_t depth = 0;
    while (!open.empty()) {
      const auto d = open.back();
      open.pop_back();
      depth = std::max(depth, d);
      if (rng.uniform() < cfg.alpha * std::pow(1.0 + static_cast<double>(d), -cfg.beta)) {
        open.push_back(d + 1);
        open.push_back(d + 1);
      }
    }
    direct[depth] += 1.0 / trees;
  }
  std::set<std::size_t> buckets;
  for (const auto& [d, _] : mcmc) buckets.insert(d);
  for (const auto& [d, _] : direct) buckets.insert(d);
  double worst = 0.0;
  std::string table;
  for (auto d : buckets) {
    worst = std::max(worst, std::abs(mcmc[d] - direct[d]));
    table += " d" + std::to_string(d) + "=" + fmt(mcmc[d], 3) + "/" + fmt(direct[d], 3);
  }
  return {worst <= 0.05, "max bucket diff " + fmt(worst, 3) + " (sampled/direct:" + table + ")"};
}

ModelMatrix gaussian_peak_data(std::size_t n, Rng& rng) {
  ModelMatrix m;
  m.columns = {"temperature", "noise"};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 15.0 + 20.0 * rng.uniform();
    const double z = rng.uniform() * 10.0;
    const double p = std::exp(-(t - 25.0) * (t - 25.0) / (2.0 * 2.0 * 2.0));
    const int y = rng.uniform() < p ? 1 : 0;
    m.values.insert(m.values.end(), {t, z});
    m.response.push_back(y);
    m.provenance.push_back({i, 0.0, 0.0, std::nullopt, y ? RowSource::presence : RowSource::absence});
  }
  m.raw_values = m.values;
  return m;
}

Outcome synthetic_recovery() {
  Rng rng(505);
  const auto train = gaussian_peak_data(400, rng);
  const auto test = gaussian_peak_data(200, rng);
  bart::SamplerConfig cfg;
  cfg.trees = 50;
  cfg.n_burn = 500;
  cfg.n_draws = 500;
  cfg.seed = 506;
  const auto model = bart::fit_bart(train, cfg);
  const auto fit = eval::evaluate_fit(train.response, model.fitted_mean());

  const auto held = eval::posterior_mean(model, test.values, 1);
  const double auc = eval::roc_auc(test.response, held).auc;

  const auto pdp = eval::partial_dependence(model, train, "temperature", 41);
  const auto peak = std::max_element(pdp.mean.begin(), pdp.mean.end()) - pdp.mean.begin();
  const double argmax = pdp.grid[static_cast<std::size_t>(peak)];

  auto importance = [&](const ModelMatrix& rows) {
    const auto imp = eval::permutation_importance(model, rows, fit.cutoff, 10, 507);
    std::pair<double, double> out;  // informative, noise
    for (std::size_t j = 0; j < imp.variables.size(); ++j) {
      (imp.variables[j] == "temperature" ? out.first : out.second) = imp.mean(j);
    }
    return out;
  };
  // Scored on the held-out rows; the in-sample figure is reported alongside.
  const auto [informative, noise] = importance(test);
  const auto [informative_in, noise_in] = importance(train);
  const bool pass = auc >= 0.85 && argmax >= 23.0 && argmax <= 27.0 && informative > noise && std::abs(noise) <= 0.05;
  return {pass, "held-out AUC " + fmt(auc) + ", PDP argmax " + fmt(argmax) + ", held-out importance temperature " +
                    fmt(informative) + " vs noise " + fmt(noise) + " (in-sample " + fmt(informative_in) + " vs " +
                    fmt(noise_in) + ")"};
}

Outcome pseudo_absence_balance() {
  const GridGeometry g{20, 25, -10.0, 30.0, 0.5};
  TimeSeriesStack series;
  for (Timestamp t : {2001, 2002, 2003}) {
    RasterLayer a(g);
    RasterLayer b(g);
    Rng rng(derive_seed(600, static_cast<std::uint64_t>(t)));
    for (std::size_t i = 0; i < g.cell_count(); ++i) {
      if (rng.uniform() < 0.2) a.set_missing(i);
      else a.set(i, rng.normal());
      if (rng.uniform() < 0.1) b.set_missing(i);
      else b.set(i, rng.normal());
    }
    RasterStack s;
    s.add("a", std::move(a));
    s.add("b", std::move(b));
    series.add(t, std::move(s));
  }
  const Environment env(std::move(series));
  std::size_t failures = 0;
  std::size_t generated = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(601, seed));
    std::vector<OccurrenceRecord> presences;
    for (Timestamp t : {2001, 2002, 2003}) {
      const auto valid = valid_cells(*env.stack_for(t));
      const std::size_t n = 5 + rng.below(60);
      for (std::size_t k = 0; k < n; ++k) {
        const auto cell = valid.cells[rng.below(valid.cells.size())];
        const auto c = cell_center(g, cell / g.n_cols, cell % g.n_cols);
        OccurrenceRecord r;
        r.lon = c.lon + (rng.uniform() - 0.5) * 0.4;
        r.lat = c.lat + (rng.uniform() - 0.5) * 0.4;
        r.timestamp = t;
        r.id = presences.size();
        presences.push_back(r);
      }
    }
    const auto absences = generate_pseudo_absences(presences, valid_mask_for(presences, env), seed);
    generated += absences.size();
    std::map<Timestamp, long> balance;
    for (const auto& p : presences) ++balance[*p.timestamp];
    std::set<std::tuple<Timestamp, std::size_t, std::size_t>> seen;
    for (const auto& a : absences) {
      --balance[*a.timestamp];
      const auto* stack = env.stack_for(a.timestamp);
      const auto cell = cell_index(g, a.lon, a.lat);
      if (!a.pseudo || a.label != 0 || !cell || stack->any_missing(cell->row * g.n_cols + cell->col)) ++failures;
      if (cell && !seen.insert({*a.timestamp, cell->row, cell->col}).second) ++failures;
      const auto center = cell ? cell_center(g, cell->row, cell->col) : LonLat{};
      if (!cell || center.lon != a.lon || center.lat != a.lat) ++failures;
    }
    for (const auto& [t, b] : balance) failures += b != 0;
  }
  return {failures == 0, std::to_string(generated) + " pseudo-absences over 100 seeds, " + std::to_string(failures) +
                             " violations"};
}

Outcome thinning_properties() {
  Rng rng(700);
  std::size_t violations = 0;
  std::size_t kept = 0;
  std::size_t total = 0;
  for (int k = 0; k < 100; ++k) {
    const int decimals = static_cast<int>(rng.below(4));
    const std::size_t n = 1 + rng.below(300);
    std::vector<OccurrenceRecord> recs;
    for (std::size_t i = 0; i < n; ++i) {
      OccurrenceRecord r;
      r.lon = 10.0 + rng.uniform() * 2.0;
      r.lat = -5.0 + rng.uniform() * 2.0;
      if (rng.uniform() < 0.3) {
        r.lon = std::round(r.lon * 10.0) / 10.0;
        r.lat = std::round(r.lat * 10.0) / 10.0;
      }
      if (rng.uniform() < 0.7) r.timestamp = static_cast<Timestamp>(rng.below(3));
      r.id = i;
      recs.push_back(r);
    }
    const std::uint64_t seed = rng.next();
    const auto out = thin_occurrences(recs, decimals, seed);
    const auto again = thin_occurrences(recs, decimals, seed);
    total += n;
    kept += out.size();
    const double scale = std::pow(10.0, decimals);
    auto bin = [&](const OccurrenceRecord& r) {
      return std::tuple(std::llround(r.lon * scale), std::llround(r.lat * scale), r.timestamp);
    };
    std::set<decltype(bin(recs[0]))> input_bins;
    for (const auto& r : recs) input_bins.insert(bin(r));
    std::set<decltype(bin(recs[0]))> bins;
    std::set<std::size_t> ids;
    for (const auto& r : out) {
      if (!bins.insert(bin(r)).second) ++violations;
      if (r.id >= n || recs[r.id].key() != r.key() || !ids.insert(r.id).second) ++violations;
    }
    if (bins != input_bins) ++violations;
    if (out.size() != again.size()) ++violations;
    for (std::size_t i = 0; i < std::min(out.size(), again.size()); ++i) violations += out[i].id != again[i].id;
  }
  return {violations == 0, "kept " + std::to_string(kept) + " of " + std::to_string(total) + " records, " +
                               std::to_string(violations) + " violations"};
}

int run_cli(const std::string& args) {
  const auto cmd = std::string(SDMBART_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct FixtureRun {
  testutil::TempDir first;
  testutil::TempDir second;
  bool ok = false;
  double seconds = 0.0;
};

void execute(FixtureRun& r) {
  const auto config = "'" + (testutil::toy_dir() / "config.json").string() + "'";
  const auto start = std::chrono::steady_clock::now();
  const int a = run_cli("run --quiet --output '" + r.first.path().string() + "' " + config);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  r.seconds = elapsed.count();
  const int b = run_cli("run --quiet --output '" + r.second.path().string() + "' " + config);
  r.ok = a == 0 && b == 0;
}

FixtureRun& fixture_run() {
  static FixtureRun run;
  static bool done = false;
  if (!done) {
    execute(run);
    done = true;
  }
  return run;
}

Outcome fixture_end_to_end() {
  auto& run = fixture_run();
  if (!run.ok) return {false, "run exited with an error"};
  const auto manifest = pipeline::load_manifest(run.first.path());
  std::size_t projection = 0;
  std::size_t averaged = 0;
  std::set<std::string> families;
  for (const auto& f : manifest.files) {
    families.insert(f.family);
    if (f.family != "raster") continue;
    (f.keys.at("scenario") == "fit" ? averaged : projection) += 1;
  }
  const std::set<std::string> tables{"cleaning", "timing",   "model_matrix", "standardization", "metrics",
                                     "roc",      "fitted_distribution", "cv", "cv_folds", "importance",
                                     "response_curves", "habitat_area", "failures", "model"};
  std::vector<std::string> missing;
  for (const auto& t : tables) {
    if (!families.count(t)) missing.push_back(t);
  }
  const bool hashes_ok = pipeline::verify_manifest(run.first.path(), manifest).empty();
  const bool identical =
      testutil::read_file(run.first / "manifest.json") == testutil::read_file(run.second / "manifest.json");
  const bool pass = projection == 30 && averaged == 5 && missing.empty() && hashes_ok && identical && run.seconds < 120.0;
  std::string detail = std::to_string(projection) + " projection + " + std::to_string(averaged) +
                       " averaged rasters, run " + fmt(run.seconds, 3) + " s, manifests " +
                       (identical ? "identical" : "differ");
  if (!missing.empty()) detail += ", missing families:" + [&] {
    std::string s;
    for (const auto& m : missing) s += " " + m;
    return s;
  }();
  if (!hashes_ok) detail += ", hash verification failed";
  return {pass, detail};
}

Outcome fixture_quantile_ordering() {
  auto& run = fixture_run();
  if (!run.ok) return {false, "run exited with an error"};
  const auto manifest = pipeline::load_manifest(run.first.path());
  std::map<std::string, std::map<std::string, std::string>> groups;
  for (const auto& f : manifest.files) {
    if (f.family != "raster") continue;
    const auto key = f.keys.at("species") + "/" + f.keys.at("variant") + "/" + f.keys.at("scenario") + "/" +
                     f.keys.at("timestamp");
    groups[key][f.keys.at("summary")] = f.path;
  }
  std::size_t cells = 0;
  std::size_t violations = 0;
  for (const auto& [key, files] : groups) {
    const auto lo = load_ascii_grid(run.first / files.at("q025"));
    const auto mid = load_ascii_grid(run.first / files.at("median"));
    const auto hi = load_ascii_grid(run.first / files.at("q975"));
    for (std::size_t i = 0; i < lo.grid().cell_count(); ++i) {
      if (lo.missing(i) || mid.missing(i) || hi.missing(i)) {
        violations += !(lo.missing(i) && mid.missing(i) && hi.missing(i));
        continue;
      }
      ++cells;
      violations += !(lo.value(i) <= mid.value(i) && mid.value(i) <= hi.value(i));
    }
  }
  return {violations == 0 && cells > 0, std::to_string(groups.size()) + " raster sets, " + std::to_string(cells) +
                                            " cells, " + std::to_string(violations) + " violations"};
}

Outcome five_fold_cv() {
  const auto m = testutil::synthetic_matrix(200, 800, 3.0);
  bart::SamplerConfig cfg;
  cfg.trees = 50;
  cfg.n_burn = 200;
  cfg.n_draws = 200;
  const auto cv = eval::kfold_cv(m, 5, cfg, 801);
  std::vector<std::size_t> size(5, 0);
  std::vector<std::size_t> pos(5, 0);
  bool partition = cv.fold_of.size() == m.n_rows();
  for (std::size_t i = 0; i < cv.fold_of.size(); ++i) {
    partition = partition && cv.fold_of[i] < 5;
    if (cv.fold_of[i] >= 5) continue;
    ++size[cv.fold_of[i]];
    pos[cv.fold_of[i]] += static_cast<std::size_t>(m.response[i]);
  }
  std::vector<std::size_t> neg(5);
  for (std::size_t f = 0; f < 5; ++f) neg[f] = size[f] - pos[f];
  auto spread = [](const std::vector<std::size_t>& v) { return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()); };
  const bool stratified = spread(pos) <= 1 && spread(neg) <= 1;
  const double auc = cv.mean.at("auc").value_or(0.0);
  return {partition && stratified && auc >= 0.9,
          std::string(partition ? "partition ok" : "not a partition") + ", class spread " + std::to_string(spread(pos)) +
              "/" + std::to_string(spread(neg)) + ", mean held-out AUC " + fmt(auc)};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    double budget_seconds;  // 0 = no runtime bound
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"auc_matches_mann_whitney", 10.0, auc_oracle},
      {"youden_matches_exhaustive_scan", 0.0, youden_oracle},
      {"leaf_posterior_closed_form", 0.0, leaf_posterior_oracle},
      {"probit_matches_erf", 0.0, probit_oracle},
      {"tree_prior_depth_distribution", 0.0, tree_prior_depth},
      {"synthetic_species_recovery", 300.0, synthetic_recovery},
      {"pseudo_absence_balance", 5.0, pseudo_absence_balance},
      {"thinning_properties", 0.0, thinning_properties},
      {"toy_fixture_end_to_end", 0.0, fixture_end_to_end},
      {"toy_fixture_quantile_ordering", 0.0, fixture_quantile_ordering},
      {"five_fold_cross_validation", 0.0, five_fold_cv},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (c.budget_seconds > 0.0 && elapsed.count() >= c.budget_seconds) {
      o.pass = false;
      o.detail += ", over the " + fmt(c.budget_seconds) + " s budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << fmt(elapsed.count(), 3) << " s]"
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
