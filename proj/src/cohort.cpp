#include "stablecde/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stablecde/errors.hpp"
#include "stablecde/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stablecde::cohort {

namespace {

constexpr double kVasoEdges[4] = {0.0, 0.08, 0.22, 0.45};
constexpr double kFluidEdges[4] = {0.0, 50.0, 180.0, 530.0};

int edge_bin(double dose, const double* edges) {
  if (dose < 0.0) throw IngestionError("dose must be nonnegative");
  if (dose == 0.0) return 0;
  if (dose <= edges[1]) return 1;
  if (dose <= edges[2]) return 2;
  if (dose <= edges[3]) return 3;
  return 4;
}

// Fixed per-cohort feature maps: 33 saturating responses to severity plus a
// nuisance loading. Shapes depend only on the master seed.
struct FeatureMaps {
  double center[kFeatureDim];
  double sharp[kFeatureDim];
  double sev_gain[kFeatureDim];
  double nui_gain[kFeatureDim];
  int nui_index[kFeatureDim];
};

FeatureMaps make_feature_maps(std::uint64_t seed, const CohortParams& p) {
  FeatureMaps fm{};
  Rng rng = Rng::substream(seed, 0xFEA7u);
  for (std::size_t j = 0; j < kFeatureDim; ++j) {
    fm.center[j] = rng.uniform(0.15, 0.85);
    // A handful of fast-transition features carry the sharp acuity swings.
    fm.sharp[j] = (j % 4 == 0) ? rng.uniform(10.0, 18.0) : rng.uniform(2.5, 6.0);
    const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    fm.sev_gain[j] = sign * rng.uniform(0.8, 1.6);
    fm.nui_gain[j] = (j % 2 == 0) ? p.nuisance_weight * rng.uniform(0.6, 1.2) : 0.0;
    fm.nui_index[j] = static_cast<int>(j) % std::max(1, p.nuisance_factors);
  }
  return fm;
}

struct RawPatient {
  std::vector<double> times;
  std::vector<double> severity;
  std::vector<int> actions;
  ad::Array obs;
  std::vector<double> sofa, sapsii, oasis;
};

int draw_behavior_bin(Rng& rng, int indicated, double accuracy) {
  double w[5];
  for (int b = 0; b < 5; ++b) w[b] = 0.015;
  w[indicated] = accuracy;
  if (indicated > 0) w[indicated - 1] = (1.0 - accuracy) * 0.4;
  if (indicated < 4) w[indicated + 1] = (1.0 - accuracy) * 0.4;
  return rng.categorical(w, 5);
}

double dose_within_vaso_bin(Rng& rng, int bin) {
  if (bin == 0) return 0.0;
  if (bin == 4) return kVasoEdges[3] + rng.uniform(0.001, 0.8);
  return kVasoEdges[bin - 1] + rng.uniform(1e-4, 1.0) * (kVasoEdges[bin] - kVasoEdges[bin - 1]);
}

double dose_within_fluid_bin(Rng& rng, int bin) {
  if (bin == 0) return 0.0;
  if (bin == 4) return kFluidEdges[3] + rng.uniform(1.0, 900.0);
  return kFluidEdges[bin - 1] + rng.uniform(1e-4, 1.0) * (kFluidEdges[bin] - kFluidEdges[bin - 1]);
}

RawPatient simulate_patient(std::uint64_t seed, int index, const CohortParams& p,
                            const FeatureMaps& fm) {
  Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(index) + 1);
  RawPatient rp;

  // Observation grid: nominal cadence with jitter, interior thinning.
  const int nominal = static_cast<int>(p.horizon_hours / p.cadence_hours);  // 18
  rp.times.push_back(0.0);
  for (int k = 1; k < nominal; ++k) {
    const double t =
        p.cadence_hours * static_cast<double>(k) + rng.uniform(-p.time_jitter, p.time_jitter);
    const bool drop = k + 1 < nominal && rng.bernoulli(p.drop_prob);
    if (!drop && t > rp.times.back() + 0.25) rp.times.push_back(t);
  }
  if (rp.times.size() < 2) rp.times.push_back(p.cadence_hours);

  const std::size_t K = rp.times.size();
  const double noise = p.process_noise;

  // Patient attractor and initial severity.
  double mu = 0.28 + 0.16 * rng.gauss() * noise;
  mu = std::clamp(mu, 0.05, 0.75);
  double s = std::clamp(mu + 0.12 * rng.gauss() * noise, 0.01, 0.9);

  std::vector<double> nui(static_cast<std::size_t>(std::max(1, p.nuisance_factors)));
  for (auto& z : nui) z = rng.gauss() * noise;

  rp.severity.resize(K);
  rp.actions.resize(K);
  rp.obs.assign_zeros({K, kFeatureDim});
  rp.sofa.resize(K);
  rp.sapsii.resize(K);
  rp.oasis.resize(K);

  for (std::size_t k = 0; k < K; ++k) {
    rp.severity[k] = s;

    // Logged treatment: mostly the indicated bins with occasional misses.
    const int v_star = indicated_vaso_bin(s);
    const int f_star = indicated_fluid_bin(s);
    const int v = draw_behavior_bin(rng, v_star, p.behavior_accuracy);
    const int f = draw_behavior_bin(rng, f_star, p.behavior_accuracy);
    const double vdose = dose_within_vaso_bin(rng, v);
    const double fdose = dose_within_fluid_bin(rng, f);
    rp.actions[k] = bin_action(vdose, fdose);

    // Emit observations at the current state.
    for (std::size_t j = 0; j < kFeatureDim; ++j) {
      const double sat = std::tanh(fm.sharp[j] * (s - fm.center[j]));
      const double z = fm.nui_gain[j] * nui[static_cast<std::size_t>(fm.nui_index[j])];
      rp.obs.at2(k, j) =
          fm.sev_gain[j] * sat + z + p.obs_noise * rng.gauss();
    }
    rp.sofa[k] = std::clamp(24.0 * std::pow(s, 0.9) + 0.5 * rng.gauss(), 0.0, 24.0);
    rp.sapsii[k] =
        std::clamp(163.0 * (0.75 * s + 0.25 * s * s) + 2.5 * rng.gauss(), 0.0, 163.0);
    rp.oasis[k] = std::clamp(10.0 + 73.0 * std::pow(s, 1.1) + 1.8 * rng.gauss(), 10.0, 83.0);

    if (k + 1 == K) break;

    // Advance the latent severity to the next observation.
    const double dt_norm = (rp.times[k + 1] - rp.times[k]) / p.cadence_hours;
    const int dist = std::abs(v - v_star) + std::abs(f - f_star);
    double drift = p.mean_reversion * (mu - s);
    if (dist == 0)
      drift -= p.recovery_drift * p.action_effect;
    else
      drift += p.mistreat_drift * static_cast<double>(dist) * p.action_effect;
    double jump = 0.0;
    if (rng.bernoulli(p.event_prob)) jump = rng.uniform(0.12, 0.3) * noise;
    s += drift * dt_norm + jump +
         p.severity_noise * std::sqrt(dt_norm) * rng.gauss() * noise;
    s = std::clamp(s, 0.0, 1.1);

    for (auto& z : nui)
      z += (-0.10 * z) * dt_norm + 0.18 * std::sqrt(dt_norm) * rng.gauss() * noise;
  }
  return rp;
}

}  // namespace

int vaso_bin(double dose) { return edge_bin(dose, kVasoEdges); }
int fluid_bin(double dose) { return edge_bin(dose, kFluidEdges); }

int bin_action(double vaso_dose, double fluid_dose) {
  return vaso_bin(vaso_dose) * 5 + fluid_bin(fluid_dose);
}

int indicated_vaso_bin(double severity) {
  if (severity < 0.2) return 0;
  if (severity < 0.4) return 1;
  if (severity < 0.6) return 2;
  if (severity < 0.8) return 3;
  return 4;
}

int indicated_fluid_bin(double severity) {
  if (severity < 0.15) return 0;
  if (severity < 0.35) return 1;
  if (severity < 0.6) return 2;
  if (severity < 0.85) return 3;
  return 4;
}

std::vector<Trajectory> generate_cohort(int n, std::uint64_t seed,
                                        const CohortParams& params, bool parallel) {
  if (n < 10) throw ConfigError("generate_cohort: n must be at least 10");
  const FeatureMaps fm = make_feature_maps(seed, params);

  std::vector<RawPatient> raw(static_cast<std::size_t>(n));
#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < n; ++i) raw[static_cast<std::size_t>(i)] = simulate_patient(seed, i, params, fm);
  } else
#endif
  {
    for (int i = 0; i < n; ++i) raw[static_cast<std::size_t>(i)] = simulate_patient(seed, i, params, fm);
  }

  // Mortality threshold by bisection on the crossing rate. Paths do not
  // depend on the threshold, only the truncation point does.
  auto mortality_at = [&](double theta) {
    int deaths = 0;
    for (const auto& rp : raw) {
      for (std::size_t k = 1; k < rp.severity.size(); ++k) {
        if (rp.severity[k] >= theta) {
          ++deaths;
          break;
        }
      }
    }
    return static_cast<double>(deaths) / static_cast<double>(n);
  };
  double lo = 0.30, hi = 1.25;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mortality_at(mid) > params.target_mortality)
      lo = mid;
    else
      hi = mid;
  }
  // Pick the better endpoint of the final bracket.
  const double theta =
      std::fabs(mortality_at(lo) - params.target_mortality) <
              std::fabs(mortality_at(hi) - params.target_mortality)
          ? lo
          : hi;
  const double achieved = mortality_at(theta);
  if (n >= 2000 &&
      std::fabs(achieved - params.target_mortality) > params.mortality_band)
    throw NumericalError("generate_cohort: mortality calibration failed (got " +
                         std::to_string(achieved) + ")");

  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  char idbuf[32];
  for (int i = 0; i < n; ++i) {
    const RawPatient& rp = raw[static_cast<std::size_t>(i)];
    Trajectory& tr = out[static_cast<std::size_t>(i)];
    std::snprintf(idbuf, sizeof idbuf, "p%06d", i);
    tr.patient_id = idbuf;
    std::size_t K = rp.severity.size();
    tr.died = false;
    for (std::size_t k = 1; k < rp.severity.size(); ++k) {
      if (rp.severity[k] >= theta) {
        K = k + 1;  // last observation at the crossing step
        tr.died = true;
        break;
      }
    }
    tr.times.assign(rp.times.begin(), rp.times.begin() + static_cast<long>(K));
    tr.actions.assign(rp.actions.begin(), rp.actions.begin() + static_cast<long>(K));
    tr.sofa.assign(rp.sofa.begin(), rp.sofa.begin() + static_cast<long>(K));
    tr.sapsii.assign(rp.sapsii.begin(), rp.sapsii.begin() + static_cast<long>(K));
    tr.oasis.assign(rp.oasis.begin(), rp.oasis.begin() + static_cast<long>(K));
    tr.observations.assign_zeros({K, kFeatureDim});
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < kFeatureDim; ++j)
        tr.observations.at2(k, j) = rp.obs.at2(k, j);
  }
  return out;
}

CohortSplit split_cohort(const std::vector<Trajectory>& trajectories,
                         double train_ratio, double val_ratio, double test_ratio,
                         std::uint64_t seed) {
  const std::size_t n = trajectories.size();
  if (n < 20) throw SplitError("split_cohort: need at least 20 trajectories");
  if (std::fabs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw ConfigError("split_cohort: ratios must sum to 1");

  // Canonical order, then per-stratum shuffle, so input permutations with
  // the same seed give identical splits.
  std::vector<const Trajectory*> sorted;
  sorted.reserve(n);
  for (const auto& t : trajectories) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(),
            [](const Trajectory* a, const Trajectory* b) {
              return a->patient_id < b->patient_id;
            });

  std::vector<const Trajectory*> strata[2];
  for (const Trajectory* t : sorted) strata[t->died ? 1 : 0].push_back(t);

  const double ratios[3] = {train_ratio, val_ratio, test_ratio};
  // Global split sizes by largest remainder.
  std::size_t target[3];
  {
    double rem[3];
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
      const double q = ratios[k] * static_cast<double>(n);
      target[k] = static_cast<std::size_t>(q);
      rem[k] = q - static_cast<double>(target[k]);
      used += target[k];
    }
    while (used < n) {
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (rem[k] > rem[best]) best = k;
      ++target[best];
      rem[best] = -1.0;
      ++used;
    }
  }

  CohortSplit split;
  std::vector<std::string>* lists[3] = {&split.train, &split.val, &split.test};
  std::size_t assigned[3] = {0, 0, 0};
  std::size_t deaths_in[3] = {0, 0, 0};

  for (int sidx = 1; sidx >= 0; --sidx) {  // minority stratum first
    auto& group = strata[sidx];
    if (group.empty()) continue;
    Rng rng = Rng::substream(seed, 0x5b17 + static_cast<std::uint64_t>(sidx));
    for (std::size_t i = group.size(); i > 1; --i)
      std::swap(group[i - 1], group[rng.below(i)]);

    const std::size_t gs = group.size();
    std::size_t counts[3];
    double rem[3];
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
      const double q = ratios[k] * static_cast<double>(gs);
      counts[k] = static_cast<std::size_t>(q);
      rem[k] = q - static_cast<double>(counts[k]);
      used += counts[k];
    }
    while (used < gs) {
      int best = -1;
      for (int k = 0; k < 3; ++k) {
        if (assigned[k] + counts[k] >= target[k]) continue;  // split is full
        if (best < 0 || rem[k] > rem[best]) best = k;
      }
      if (best < 0) {
        for (int k = 0; k < 3; ++k)
          if (assigned[k] + counts[k] < target[k] ||
              (assigned[k] + counts[k] == target[k] && counts[k] == 0))
            best = k;
        if (best < 0) best = 0;
      }
      ++counts[best];
      rem[best] = -1.0;
      ++used;
    }
    for (int k = 0; k < 3; ++k)
      if (counts[k] == 0)
        throw SplitError("split_cohort: stratum too small to populate split " +
                         std::to_string(k));

    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t i = 0; i < counts[k]; ++i, ++pos) {
        lists[k]->push_back(group[pos]->patient_id);
        if (sidx == 1) ++deaths_in[k];
      }
      assigned[k] += counts[k];
    }
  }
  for (int k = 0; k < 3; ++k) std::sort(lists[k]->begin(), lists[k]->end());

  const double global_deaths = static_cast<double>(strata[1].size());
  split.mortality_global = global_deaths / static_cast<double>(n);
  split.mortality_train =
      split.train.empty() ? 0.0
                          : static_cast<double>(deaths_in[0]) /
                                static_cast<double>(split.train.size());
  split.mortality_val = split.val.empty()
                            ? 0.0
                            : static_cast<double>(deaths_in[1]) /
                                  static_cast<double>(split.val.size());
  split.mortality_test = split.test.empty()
                             ? 0.0
                             : static_cast<double>(deaths_in[2]) /
                                   static_cast<double>(split.test.size());
  return split;
}

namespace {

const char* kHeaderPrefix = "patient_id,t_hours";

std::string csv_header() {
  std::string h = kHeaderPrefix;
  for (std::size_t j = 0; j < kFeatureDim; ++j) h += ",f" + std::to_string(j);
  h += ",action,sofa,sapsii,oasis,terminal_flag,outcome";
  return h;
}

void format_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

void write_cohort_csv(const std::vector<Trajectory>& cohort,
                      const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_cohort_csv: cannot open " + path);
  std::string line = csv_header();
  line += '\n';
  f.write(line.data(), static_cast<long>(line.size()));
  for (const auto& tr : cohort) {
    for (std::size_t k = 0; k < tr.steps(); ++k) {
      line.clear();
      line += tr.patient_id;
      line += ',';
      format_double(line, tr.times[k]);
      for (std::size_t j = 0; j < kFeatureDim; ++j) {
        line += ',';
        format_double(line, tr.observations.at2(k, j));
      }
      line += ',';
      line += std::to_string(tr.actions[k]);
      line += ',';
      format_double(line, tr.sofa[k]);
      line += ',';
      format_double(line, tr.sapsii[k]);
      line += ',';
      format_double(line, tr.oasis[k]);
      line += ',';
      line += (k + 1 == tr.steps()) ? '1' : '0';
      line += ',';
      line += tr.died ? '1' : '0';
      line += '\n';
      f.write(line.data(), static_cast<long>(line.size()));
    }
  }
  if (!f) throw DataError("write_cohort_csv: write failed for " + path);
}

std::vector<Trajectory> read_cohort_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_cohort_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw IngestionError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string expected = csv_header();
  if (line != expected)
    throw IngestionError(path + ": header mismatch; required columns: " + expected);

  std::vector<Trajectory> out;
  Trajectory* cur = nullptr;
  std::vector<std::string> cells;
  std::vector<std::vector<double>> obs_rows;
  std::size_t row_no = 1;

  auto flush = [&]() {
    if (!cur) return;
    const std::size_t K = cur->times.size();
    cur->observations.assign_zeros({K, kFeatureDim});
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < kFeatureDim; ++j)
        cur->observations.at2(k, j) = obs_rows[k][j];
    obs_rows.clear();
    cur = nullptr;
  };

  while (std::getline(f, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    cells.clear();
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        cells.emplace_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    const std::size_t want = 2 + kFeatureDim + 6;
    if (cells.size() != want)
      throw IngestionError(path + ":" + std::to_string(row_no) + ": expected " +
                           std::to_string(want) + " columns, got " +
                           std::to_string(cells.size()));
    auto num = [&](std::size_t c) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(cells[c], &pos);
        if (pos != cells[c].size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw IngestionError(path + ":" + std::to_string(row_no) + ": column " +
                             std::to_string(c) + " is not numeric: '" + cells[c] + "'");
      }
    };

    const std::string& pid = cells[0];
    if (!cur || cur->patient_id != pid) {
      flush();
      out.emplace_back();
      cur = &out.back();
      cur->patient_id = pid;
    }
    const double t = num(1);
    if (!cur->times.empty() && !(t > cur->times.back()))
      throw IngestionError(path + ":" + std::to_string(row_no) +
                           ": t_hours not strictly increasing for patient " + pid);
    cur->times.push_back(t);
    std::vector<double> row(kFeatureDim);
    for (std::size_t j = 0; j < kFeatureDim; ++j) row[j] = num(2 + j);
    obs_rows.push_back(std::move(row));

    const double actd = num(2 + kFeatureDim);
    const int act = static_cast<int>(actd);
    if (actd != static_cast<double>(act) || act < 0 || act >= kActionCount)
      throw IngestionError(path + ":" + std::to_string(row_no) +
                           ": column action out of [0,24]: " + cells[2 + kFeatureDim]);
    cur->actions.push_back(act);
    const double sofa = num(3 + kFeatureDim);
    const double sapsii = num(4 + kFeatureDim);
    const double oasis = num(5 + kFeatureDim);
    if (sofa < 0.0 || sofa > 24.0 || sapsii < 0.0 || sapsii > 163.0 ||
        oasis < 10.0 || oasis > 83.0)
      throw IngestionError(path + ":" + std::to_string(row_no) +
                           ": acuity score outside its documented range");
    cur->sofa.push_back(sofa);
    cur->sapsii.push_back(sapsii);
    cur->oasis.push_back(oasis);
    const double outcome = num(7 + kFeatureDim);
    if (outcome != 0.0 && outcome != 1.0)
      throw IngestionError(path + ":" + std::to_string(row_no) +
                           ": outcome must be 0 or 1");
    const bool died = outcome == 1.0;
    if (cur->times.size() == 1)
      cur->died = died;
    else if (cur->died != died)
      throw IngestionError(path + ":" + std::to_string(row_no) +
                           ": outcome changes within patient " + pid);
  }
  flush();
  for (const auto& tr : out)
    if (tr.steps() < 2)
      throw IngestionError(path + ": patient " + tr.patient_id +
                           " has fewer than 2 observations");
  return out;
}

std::vector<Trajectory> select_by_ids(const std::vector<Trajectory>& cohort,
                                      const std::vector<std::string>& ids) {
  std::vector<Trajectory> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    bool found = false;
    for (const auto& tr : cohort) {
      if (tr.patient_id == id) {
        out.push_back(tr);
        found = true;
        break;
      }
    }
    if (!found) throw DataError("select_by_ids: unknown patient id " + id);
  }
  return out;
}

}  // namespace stablecde::cohort
