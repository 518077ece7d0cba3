#include "rkt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "csv.hpp"
#include "rkt/embeddings.hpp"
#include "rkt/errors.hpp"

namespace rkt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// y and weight for windows starting at `starts`, in original units.
void fill_targets(const PreparedData& d, std::span<const std::size_t> starts, std::size_t P, std::size_t Q, Tensor& y,
                  Tensor& weight) {
  const std::size_t nx = d.raw.roads();
  y = Tensor({starts.size(), Q, nx});
  weight = Tensor({starts.size(), Q, nx});
  for (std::size_t w = 0; w < starts.size(); ++w)
    for (std::size_t h = 0; h < Q; ++h) {
      const std::size_t t = starts[w] + P + h;
      for (std::size_t r = 0; r < nx; ++r) {
        const std::size_t o = (w * Q + h) * nx + r;
        y[o] = d.raw.x[t * nx + r];
        weight[o] = d.raw.x_missing.empty() || d.raw.x_missing[t * nx + r] == 0 ? 1.0 : 0.0;
      }
    }
}

std::vector<std::size_t> training_windows(const PreparedData& d, const ModelConfig& cfg, const TrainOptions& opt) {
  std::vector<std::size_t> all =
      opt.train_starts.empty() ? window_starts(d.split, Partition::Train, cfg.P, cfg.Q) : opt.train_starts;
  if (opt.train_stride == 0) throw ConfigError("train_stride must be >= 1");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < all.size(); i += opt.train_stride) out.push_back(all[i]);
  if (out.empty()) throw DataError("no training windows");
  return out;
}

}  // namespace

Batch make_batch(const PreparedData& d, std::span<const std::size_t> starts, std::size_t P, std::size_t Q) {
  const std::size_t B = starts.size();
  const std::size_t nx = d.raw.roads();
  const std::size_t nz = d.raw.cells();
  Batch b;
  b.starts.assign(starts.begin(), starts.end());
  b.x = Tensor({B, P, nx});
  b.z = Tensor({B, P, nz});
  b.y = Tensor({B, Q, nx});
  std::vector<std::vector<Timestamp>> times;
  for (std::size_t i = 0; i < B; ++i) {
    Sample s = make_sample(d, starts[i], P, Q);
    std::copy(s.x_hist.data().begin(), s.x_hist.data().end(), b.x.data().begin() + i * P * nx);
    std::copy(s.z_hist.data().begin(), s.z_hist.data().end(), b.z.data().begin() + i * P * nz);
    std::copy(s.y.data().begin(), s.y.data().end(), b.y.data().begin() + i * Q * nx);
    times.push_back(std::move(s.times));
  }
  b.tfeat = temporal_features(times);
  Tensor unused;
  fill_targets(d, starts, P, Q, unused, b.weight);
  return b;
}

TrainResult train(Model& m, const PreparedData& d, const TrainOptions& opt) {
  const ModelConfig& cfg = m.config();
  std::vector<std::size_t> starts = training_windows(d, cfg, opt);
  std::mt19937_64 rng(cfg.seed ^ 0x5eed5eedULL);
  const AdamOptions adam{.lr = cfg.learning_rate};

  TrainResult res;
  res.best_val_mae = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = m.params().snapshot();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(starts.begin(), starts.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < starts.size(); i += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, starts.size() - i);
      Batch b = make_batch(d, std::span(starts).subspan(i, n), cfg.P, cfg.Q);
      Tape tape;
      Var loss = masked_mae(m.forward(tape, b.x, b.z, b.tfeat), b.y, b.weight);
      const double l = loss.value().item();
      if (!std::isfinite(l)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(i / cfg.batch_size));
      }
      tape.backward(loss);
      adam_step(m.params(), adam);
      loss_sum += l * static_cast<double>(n);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(starts.size()), kNaN};
    if (opt.validate) {
      rec.val_mae = evaluate(m, d, Partition::Val).average.mae;
      if (rec.val_mae < res.best_val_mae) {
        res.best_val_mae = rec.val_mae;
        res.best_epoch = epoch;
        best = m.params().snapshot();
      }
    } else {
      res.best_epoch = epoch;
      res.best_val_mae = kNaN;
    }
    res.history.push_back(rec);
    if (opt.log != nullptr) {
      *opt.log << "epoch " << epoch << " train_mae " << rec.train_mae << " val_mae " << rec.val_mae << '\n';
    }
    if (opt.stop_train_mae && rec.train_mae < *opt.stop_train_mae) break;
    if (opt.validate && epoch - res.best_epoch >= cfg.patience) break;
  }
  if (opt.validate) m.params().restore(best);
  return res;
}

// ---------------------------------------------------------------------------

MetricsReport compute_metrics(const Predictions& p, std::span<const std::size_t> roads) {
  if (p.yhat.shape() != p.y.shape() || p.weight.shape() != p.y.shape() || p.y.rank() != 3) {
    throw ShapeError("metrics: prediction " + to_string(p.yhat.shape()) + " vs target " + to_string(p.y.shape()));
  }
  const std::size_t W = p.y.dim(0), Q = p.y.dim(1), N = p.y.dim(2);
  std::vector<std::size_t> all;
  if (roads.empty()) {
    all.resize(N);
    std::iota(all.begin(), all.end(), 0);
    roads = all;
  }
  struct Acc {
    double abs = 0, sq = 0, pct = 0;
    std::size_t n = 0, np = 0;
    Metrics finish() const {
      Metrics m;
      m.count = n;
      m.mape_count = np;
      m.mae = n ? abs / static_cast<double>(n) : kNaN;
      m.rmse = n ? std::sqrt(sq / static_cast<double>(n)) : kNaN;
      m.mape = np ? 100.0 * pct / static_cast<double>(np) : kNaN;
      return m;
    }
  };
  std::vector<Acc> hz(Q);
  Acc total;
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t h = 0; h < Q; ++h)
      for (std::size_t r : roads) {
        if (r >= N) throw ShapeError("metrics: road index out of range");
        const std::size_t o = (w * Q + h) * N + r;
        if (p.weight[o] == 0.0) continue;
        const double e = p.yhat[o] - p.y[o];
        for (Acc* a : {&hz[h], &total}) {
          a->abs += std::abs(e);
          a->sq += e * e;
          ++a->n;
          if (std::abs(p.y[o]) >= kMapeFloor) {
            a->pct += std::abs(e) / std::abs(p.y[o]);
            ++a->np;
          }
        }
      }
  if (total.n == 0) throw DataError("no observed targets to score");
  MetricsReport rep;
  for (const auto& a : hz) rep.horizon.push_back(a.finish());
  rep.average = total.finish();
  return rep;
}

Predictions predict(Model& m, const PreparedData& d, Partition part, std::size_t batch_size) {
  const ModelConfig& cfg = m.config();
  const auto starts = window_starts(d.split, part, cfg.P, cfg.Q);
  if (starts.empty()) throw DataError(std::string(partition_name(part)) + " partition has no windows");
  const std::size_t nx = d.raw.roads();
  if (nx != m.context().n_x || d.raw.cells() != m.context().n_z) {
    throw ConfigError("dataset shape does not match the model (" + std::to_string(nx) + " roads, " +
                      std::to_string(d.raw.cells()) + " cells)");
  }
  Predictions p;
  p.starts = starts;
  fill_targets(d, starts, cfg.P, cfg.Q, p.y, p.weight);
  p.yhat = Tensor(p.y.shape());
  const std::size_t stride = cfg.Q * nx;
  for (std::size_t i = 0; i < starts.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, starts.size() - i);
    Batch b = make_batch(d, std::span(starts).subspan(i, n), cfg.P, cfg.Q);
    Tape tape(false);
    const Tensor& out = m.forward(tape, b.x, b.z, b.tfeat).value();
    for (std::size_t k = 0; k < n * stride; ++k) {
      const std::size_t r = k % nx;
      p.yhat[i * stride + k] = out[k] * d.stats.x_std[r] + d.stats.x_mean[r];
    }
  }
  return p;
}

MetricsReport evaluate(Model& m, const PreparedData& d, Partition part) { return compute_metrics(predict(m, d, part)); }

// ---------------------------------------------------------------------------

namespace {
std::size_t ha_bucket(Timestamp ts) {
  return static_cast<std::size_t>(day_of_week(ts)) * 24 + static_cast<std::size_t>(hour_of_day(ts));
}
}  // namespace

double HaTable::predict(Timestamp ts, std::size_t road) const {
  const double v = bucket_mean[ha_bucket(ts) * road_mean.size() + road];
  return std::isnan(v) ? road_mean[road] : v;
}

HaTable fit_ha(const PreparedData& d) {
  const std::size_t nx = d.raw.roads();
  const std::size_t end = d.split.train_end;
  std::vector<double> sum(168 * nx, 0.0), rsum(nx, 0.0);
  std::vector<std::size_t> cnt(168 * nx, 0), rcnt(nx, 0);
  for (std::size_t t = 0; t < end; ++t) {
    const std::size_t b = ha_bucket(d.raw.timestamps[t]);
    for (std::size_t r = 0; r < nx; ++r) {
      if (!d.raw.x_missing.empty() && d.raw.x_missing[t * nx + r]) continue;
      const double v = d.raw.x[t * nx + r];
      sum[b * nx + r] += v;
      ++cnt[b * nx + r];
      rsum[r] += v;
      ++rcnt[r];
    }
  }
  const double all = std::accumulate(rsum.begin(), rsum.end(), 0.0);
  const std::size_t nall = std::accumulate(rcnt.begin(), rcnt.end(), std::size_t{0});
  if (nall == 0) throw DataError("historical average: no observed training values");
  HaTable ha;
  ha.bucket_mean = Tensor({168, nx});
  for (std::size_t i = 0; i < sum.size(); ++i) ha.bucket_mean[i] = cnt[i] ? sum[i] / static_cast<double>(cnt[i]) : kNaN;
  ha.road_mean.resize(nx);
  for (std::size_t r = 0; r < nx; ++r) {
    ha.road_mean[r] = rcnt[r] ? rsum[r] / static_cast<double>(rcnt[r]) : all / static_cast<double>(nall);
  }
  return ha;
}

Predictions ha_predict(const HaTable& ha, const PreparedData& d, Partition part, std::size_t P, std::size_t Q) {
  const auto starts = window_starts(d.split, part, P, Q);
  if (starts.empty()) throw DataError(std::string(partition_name(part)) + " partition has no windows");
  const std::size_t nx = d.raw.roads();
  Predictions p;
  p.starts = starts;
  fill_targets(d, starts, P, Q, p.y, p.weight);
  p.yhat = Tensor(p.y.shape());
  for (std::size_t w = 0; w < starts.size(); ++w)
    for (std::size_t h = 0; h < Q; ++h) {
      const Timestamp ts = d.raw.timestamps[starts[w] + P + h];
      for (std::size_t r = 0; r < nx; ++r) p.yhat[(w * Q + h) * nx + r] = ha.predict(ts, r);
    }
  return p;
}

std::vector<double> road_poi_density(const RoadGraph& graph, const RegionGrid& grid, double radius_m) {
  const Tensor dist = road_cell_distances(graph, grid);
  const std::size_t nz = grid.cells();
  std::vector<double> total(nz, 0.0);
  for (std::size_t c = 0; c < nz; ++c) total[c] = std::accumulate(grid.poi[c].begin(), grid.poi[c].end(), 0.0);
  std::vector<double> out(graph.size(), 0.0);
  for (std::size_t r = 0; r < graph.size(); ++r) {
    double s = 0.0;
    std::size_t n = 0;
    std::size_t nearest = 0;
    for (std::size_t c = 0; c < nz; ++c) {
      if (dist[r * nz + c] < dist[r * nz + nearest]) nearest = c;
      if (dist[r * nz + c] <= radius_m) s += total[c], ++n;
    }
    // A road farther than radius_m from every cell takes its nearest cell.
    out[r] = n ? s / static_cast<double>(n) : total[nearest];
  }
  return out;
}

PoiStrata poi_strata(const RoadGraph& graph, std::span<const double> density, double top_frac) {
  const std::size_t n = graph.size();
  if (n < 4) throw DataError("POI stratification needs at least 4 roads, got " + std::to_string(n));
  if (density.size() != n) throw ShapeError("POI density length does not match the road count");
  if (!(top_frac > 0.0 && top_frac <= 0.5)) throw ConfigError("top_frac must lie in (0, 0.5]");
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(top_frac * static_cast<double>(n) + 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (density[a] != density[b]) return density[a] > density[b];
    return graph.nodes()[a].road_id < graph.nodes()[b].road_id;
  });
  PoiStrata s;
  s.high.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  s.low.assign(order.end() - static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(s.high.begin(), s.high.end());
  std::sort(s.low.begin(), s.low.end());
  return s;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const Metrics& m) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json j;
  j["mae"] = num(m.mae);
  j["rmse"] = num(m.rmse);
  j["mape"] = num(m.mape);
  j["count"] = m.count;
  j["mape_count"] = m.mape_count;
  return j;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["horizon"] = nlohmann::ordered_json::array();
  for (const auto& h : r.horizon) j["horizon"].push_back(to_json(h));
  j["average"] = to_json(r.average);
  return j;
}

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  if (rows.empty()) return {};
  const std::size_t Q = rows.front().second.horizon.size();
  std::size_t name_w = 5;
  for (const auto& [name, rep] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream os;
  auto group = [&](const std::string& label) {
    for (const char* m : {" MAE", " RMSE", " MAPE"}) os << std::setw(11) << (label + m);
  };
  os << std::left << std::setw(static_cast<int>(name_w)) << "Model" << std::right;
  for (std::size_t h = 0; h < Q; ++h) group(std::to_string(h + 1) + "h");
  group("Avg.");
  os << '\n';
  auto cells = [&](const Metrics& m) {
    os << std::fixed << std::setprecision(3) << std::setw(11) << m.mae << std::setw(11) << m.rmse << std::setw(10)
       << m.mape << '%';
  };
  for (const auto& [name, rep] : rows) {
    if (rep.horizon.size() != Q) throw ShapeError("report table rows have different horizons");
    os << std::left << std::setw(static_cast<int>(name_w)) << name << std::right;
    for (const auto& h : rep.horizon) cells(h);
    cells(rep.average);
    os << '\n';
  }
  return os.str();
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "epoch,train_mae,val_mae\n";
  for (const auto& e : history) {
    f << e.epoch << ',' << csv::format_double(e.train_mae) << ','
      << (std::isnan(e.val_mae) ? std::string("nan") : csv::format_double(e.val_mae)) << '\n';
  }
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  const std::size_t ce = t.column("epoch");
  const std::size_t ct = t.column("train_mae");
  const std::size_t cv = t.column("val_mae");
  std::vector<EpochRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(csv::to_int(row[ce], t, i + 1));
    e.train_mae = csv::to_double(row[ct], t, i + 1);
    e.val_mae = row[cv] == "nan" ? kNaN : csv::to_double(row[cv], t, i + 1);
    out.push_back(e);
  }
  return out;
}

}  // namespace rkt
