#include "rkt/model.hpp"

#include <cmath>
#include <fstream>

#include "rkt/embeddings.hpp"
#include "rkt/errors.hpp"

namespace rkt {

namespace {

constexpr std::size_t kConvKernel = 5;

const std::pair<Variant, std::string_view> kVariantNames[] = {
    {Variant::Full, "full"},
    {Variant::NoRegion, "no-region"},
    {Variant::NoMask, "no-mask"},
    {Variant::StaticRegion, "static-region"},
    {Variant::CnnSpatial, "cnn-spatial"},
    {Variant::NoPoi, "no-poi"},
    {Variant::NoSat, "no-sat"},
};

std::string block_name(const char* prefix, std::size_t l) { return std::string(prefix) + std::to_string(l); }

Var checked(Var v, std::string_view stage) {
  if (!v.value().all_finite()) throw NumericError("non-finite values after stage '" + std::string(stage) + "'");
  return v;
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& [k, n] : kVariantNames)
    if (k == v) return n;
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [k, n] : kVariantNames)
    if (n == name) return k;
  std::string known;
  for (const auto& [k, n] : kVariantNames) known += (known.empty() ? "" : ", ") + std::string(n);
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected one of: " + known + ")");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::Full,         Variant::NoRegion,   Variant::NoMask, Variant::StaticRegion,
                                         Variant::CnnSpatial,   Variant::NoPoi,      Variant::NoSat};
  return v;
}

void ModelConfig::validate() {
  if (P == 0 || Q == 0) throw ConfigError("P and Q must be >= 1");
  if (L_X == 0 || L_Z == 0) throw ConfigError("L_X and L_Z must be >= 1");
  if (K == 0 || D == 0) throw ConfigError("K and D must be >= 1");
  if (d_h == 0) {
    if (D % K != 0) throw ConfigError("D = " + std::to_string(D) + " is not divisible by K = " + std::to_string(K));
    d_h = D / K;
  }
  if (K * d_h != D) {
    throw ConfigError("K * d_h must equal D (got " + std::to_string(K) + " * " + std::to_string(d_h) + " != " +
                      std::to_string(D) + ")");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(lambda_r >= -1.0 && lambda_r < 1.0)) throw ConfigError("lambda_r must lie in [-1, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(sigma0_m > 0.0)) throw ConfigError("sigma0_m must be positive");
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["P"] = c.P;
  j["Q"] = c.Q;
  j["D"] = c.D;
  j["K"] = c.K;
  j["d_h"] = c.d_h;
  j["L_X"] = c.L_X;
  j["L_Z"] = c.L_Z;
  j["lambda_r"] = c.lambda_r;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["batch_size"] = c.batch_size;
  j["gate_kind"] = c.gate_kind == GateKind::Relu ? "relu" : "logistic";
  j["corr_span"] = c.corr_span == CorrSpan::Train ? "train" : "full";
  j["variant"] = std::string(variant_name(c.variant));
  j["sigma0_m"] = c.sigma0_m;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  const nlohmann::ordered_json defaults = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("unknown model config key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("P", c.P);
    get("Q", c.Q);
    get("D", c.D);
    get("K", c.K);
    get("d_h", c.d_h);
    get("L_X", c.L_X);
    get("L_Z", c.L_Z);
    get("lambda_r", c.lambda_r);
    get("learning_rate", c.learning_rate);
    get("seed", c.seed);
    get("epochs", c.epochs);
    get("patience", c.patience);
    get("batch_size", c.batch_size);
    get("sigma0_m", c.sigma0_m);
    if (j.contains("gate_kind")) {
      const auto g = j.at("gate_kind").get<std::string>();
      if (g != "relu" && g != "logistic") throw ConfigError("gate_kind must be 'relu' or 'logistic'");
      c.gate_kind = g == "relu" ? GateKind::Relu : GateKind::Logistic;
    }
    if (j.contains("corr_span")) {
      const auto s = j.at("corr_span").get<std::string>();
      if (s != "train" && s != "full") throw ConfigError("corr_span must be 'train' or 'full'");
      c.corr_span = s == "train" ? CorrSpan::Train : CorrSpan::Full;
    }
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    // An explicit D or K without d_h re-derives the head width.
    if (!j.contains("d_h") && (j.contains("D") || j.contains("K"))) c.d_h = 0;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return to_json(a) == to_json(b); }

// ---------------------------------------------------------------------------

ModelContext make_context(const PreparedData& d, const ModelConfig& cfg, const Tensor* e_x) {
  ModelContext ctx;
  ctx.n_x = d.raw.roads();
  ctx.n_z = d.raw.cells();
  ctx.n_h = d.grid.n_h;
  ctx.n_w = d.grid.n_w;
  if (ctx.n_z != d.grid.cells()) throw DataError("population width does not match the grid");
  if (e_x != nullptr) {
    if (e_x->shape() != Shape{ctx.n_x, cfg.D}) {
      throw ConfigError("road embedding has shape " + to_string(e_x->shape()) + ", expected " +
                        to_string(Shape{ctx.n_x, cfg.D}));
    }
    ctx.e_x = *e_x;
  } else {
    ctx.e_x = node2vec_embed(d.graph, cfg.D, cfg.seed);
  }
  ctx.geo = cell_geo_features(d.grid, {.poi = cfg.variant != Variant::NoPoi, .sat = cfg.variant != Variant::NoSat});
  if (cfg.uses_z()) {
    const std::size_t rows = cfg.corr_span == CorrSpan::Train ? d.split.train_end : d.raw.steps();
    Tensor span({rows, ctx.n_z});
    std::copy_n(d.raw.z.data().data(), rows * ctx.n_z, span.data().data());
    std::vector<std::array<double, 2>> xy(ctx.n_z);
    for (std::size_t c = 0; c < ctx.n_z; ++c) xy[c] = d.grid.cell_xy_m(c);
    auto adj = build_regional_adjacency(span, xy, cfg.lambda_r);
    ctx.adj = std::move(adj.a_norm);
    ctx.sigma_dist = adj.sigma_dist;
  }
  ctx.dist = road_cell_distances(d.graph, d.grid);
  return ctx;
}

Model::Model(ModelConfig cfg, ModelContext ctx) : cfg_(std::move(cfg)), ctx_(std::move(ctx)) {
  cfg_.validate();
  if (ctx_.e_x.rank() != 2 || ctx_.e_x.dim(0) != ctx_.n_x) throw ShapeError("road embedding does not match N_X");
  if (cfg_.uses_z() && ctx_.adj.shape() != Shape{ctx_.n_z, ctx_.n_z}) throw ShapeError("adjacency does not match N_Z");
  if (cfg_.uses_region() && ctx_.dist.shape() != Shape{ctx_.n_x, ctx_.n_z}) {
    throw ShapeError("distance matrix does not match N_X x N_Z");
  }
  const bool conv = cfg_.variant == Variant::CnnSpatial || cfg_.variant == Variant::StaticRegion;
  if (conv) conv_table_ = grid_conv_table(ctx_.n_h, ctx_.n_w, kConvKernel);

  std::mt19937_64 rng(cfg_.seed);
  const std::size_t D = cfg_.D;
  const auto att = cfg_.attention();
  const std::size_t geo_dim = cfg_.uses_region() ? ctx_.geo.dim(1) : 0;
  declare_ste(params_, rng, ctx_.e_x.dim(1), geo_dim, D);
  declare_fcn2(params_, rng, "input.road", 1, D, D);

  auto declare_region_block = [&](const std::string& name) {
    if (cfg_.variant == Variant::CnnSpatial) {
      declare_grid_conv(params_, rng, name + ".spatial", kConvKernel, D, D);
    } else {
      declare_dynamic_conv(params_, rng, name + ".spatial", D);
    }
    declare_mh_attention(params_, rng, name + ".temporal", 2 * D, 2 * D, 2 * D, att);
    declare_gated_fusion(params_, rng, name + ".gate", D);
  };
  auto declare_road_block = [&](const std::string& name) {
    declare_mh_attention(params_, rng, name + ".spatial", 2 * D, 2 * D, 2 * D, att);
    declare_mh_attention(params_, rng, name + ".temporal", 2 * D, 2 * D, 2 * D, att);
    declare_gated_fusion(params_, rng, name + ".gate", D);
  };

  if (cfg_.uses_region()) {
    if (cfg_.uses_z()) {
      declare_fcn2(params_, rng, "input.region", 1, D, D);
      for (std::size_t l = 0; l < cfg_.L_Z; ++l) declare_region_block(block_name("region.encoder.block", l));
      declare_mh_attention(params_, rng, "region.transform", D, D, D, att);
      for (std::size_t l = 0; l < cfg_.L_Z; ++l) declare_region_block(block_name("region.decoder.block", l));
    } else {
      declare_fcn2(params_, rng, "input.region", geo_dim, D, D);
      for (std::size_t l = 0; l < cfg_.L_Z; ++l) {
        declare_grid_conv(params_, rng, block_name("region.static.conv", l), kConvKernel, D, D);
      }
    }
    declare_mh_attention(params_, rng, "bipartite", D, 2 * D, D, att);
    if (cfg_.uses_mask()) params_.add("bipartite.log_sigma", Tensor({ctx_.n_x, cfg_.K}, std::log(cfg_.sigma0_m)));
  }
  for (std::size_t l = 0; l < cfg_.L_X; ++l) declare_road_block(block_name("road.encoder.block", l));
  declare_mh_attention(params_, rng, "road.transform", D, D, D, att);
  for (std::size_t l = 0; l < cfg_.L_X; ++l) declare_road_block(block_name("road.decoder.block", l));
  declare_fcn2(params_, rng, "output", D, D, 1);
}

Var Model::region_block(const std::string& name, Var h, Var ste, Var adj) {
  Var hs = cfg_.variant == Variant::CnnSpatial ? grid_conv(params_, name + ".spatial", h, conv_table_, kConvKernel)
                                               : dynamic_conv(params_, name + ".spatial", adj, h);
  Var ht = temporal_attention(params_, name + ".temporal", h, ste, cfg_.attention());
  return add(h, gated_fusion(params_, name + ".gate", hs, ht, cfg_.gate_kind));
}

Var Model::road_block(const std::string& name, Var h, Var ste) {
  Var hs = spatial_attention(params_, name + ".spatial", h, ste, cfg_.attention());
  Var ht = temporal_attention(params_, name + ".temporal", h, ste, cfg_.attention());
  return add(h, gated_fusion(params_, name + ".gate", hs, ht, cfg_.gate_kind));
}

Var Model::forward(Tape& tape, const Tensor& x, const Tensor& z, const Tensor& tfeat, const ForwardOptions& opt) {
  const std::size_t P = cfg_.P, Q = cfg_.Q, D = cfg_.D;
  const std::size_t nx = ctx_.n_x, nz = ctx_.n_z;
  if (x.rank() != 3 || x.dim(1) != P || x.dim(2) != nx) {
    throw ShapeError("input: road history " + to_string(x.shape()) + ", expected (B," + std::to_string(P) + "," +
                     std::to_string(nx) + ")");
  }
  const std::size_t B = x.dim(0);
  if (tfeat.shape() != Shape{B, P + Q, kTemporalDim}) {
    throw ShapeError("input: temporal features " + to_string(tfeat.shape()) + ", expected " +
                     to_string(Shape{B, P + Q, kTemporalDim}));
  }
  if (cfg_.uses_z() && z.shape() != Shape{B, P, nz}) {
    throw ShapeError("input: regional history " + to_string(z.shape()) + ", expected " + to_string(Shape{B, P, nz}));
  }
  const auto att = cfg_.attention();

  Var tf = tape.constant(tfeat);
  Var ste_x = checked(build_ste_x(params_, tape.constant(ctx_.e_x), tf), "ste");
  Var ste_xp = slice(ste_x, 1, 0, P);
  Var ste_xq = slice(ste_x, 1, P, Q);
  Var hx = checked(fcn2(params_, "input.road", reshape(tape.constant(x), {B, P, nx, 1})), "input");

  Var hk_p = ste_xp;
  Var hk_q = ste_xq;
  if (cfg_.uses_region()) {
    Var ste_z = checked(build_ste_z(params_, tape.constant(ctx_.geo), tf), "ste");
    Var ste_zp = slice(ste_z, 1, 0, P);
    Var ste_zq = slice(ste_z, 1, P, Q);
    Var hz_p = ste_zp;
    Var hz_q = ste_zq;
    if (cfg_.uses_z()) {
      Var adj = tape.constant(ctx_.adj);
      Var hz = checked(fcn2(params_, "input.region", reshape(tape.constant(z), {B, P, nz, 1})), "input");
      for (std::size_t l = 0; l < cfg_.L_Z; ++l) hz = region_block(block_name("region.encoder.block", l), hz, ste_zp, adj);
      hz_p = checked(hz, "region.encoder");
      Var hq = add(temporal_transform(params_, "region.transform", ste_zq, ste_zp, hz_p, att), ste_zq);
      hq = checked(hq, "region.transform");
      for (std::size_t l = 0; l < cfg_.L_Z; ++l) hq = region_block(block_name("region.decoder.block", l), hq, ste_zq, adj);
      hz_q = checked(hq, "region.decoder");
    } else {
      Var h = fcn2(params_, "input.region", tape.constant(ctx_.geo));
      for (std::size_t l = 0; l < cfg_.L_Z; ++l) {
        h = grid_conv(params_, block_name("region.static.conv", l), h, conv_table_, kConvKernel);
      }
      h = checked(reshape(h, {1, 1, nz, D}), "region.static");
      hz_p = broadcast_to(h, {B, P, nz, D});
      hz_q = broadcast_to(h, {B, Q, nz, D});
    }
    if (!opt.zero_bipartite) {
      Var mask;
      const Var* mp = nullptr;
      if (cfg_.uses_mask()) {
        mask = gaussian_mask(tape.constant(ctx_.dist), tape.param(params_, "bipartite.log_sigma"));
        mp = &mask;
      }
      hk_p = add(bipartite_transform(params_, "bipartite", ste_xp, hz_p, ste_zp, mp, att), ste_xp);
      hk_q = add(bipartite_transform(params_, "bipartite", ste_xq, hz_q, ste_zq, mp, att), ste_xq);
      checked(hk_p, "bipartite");
      checked(hk_q, "bipartite");
    }
  }

  for (std::size_t l = 0; l < cfg_.L_X; ++l) hx = road_block(block_name("road.encoder.block", l), hx, ste_xp);
  checked(hx, "road.encoder");
  Var hq = checked(add(temporal_transform(params_, "road.transform", hk_q, hk_p, hx, att), hk_q), "road.transform");
  for (std::size_t l = 0; l < cfg_.L_X; ++l) hq = road_block(block_name("road.decoder.block", l), hq, ste_xq);
  checked(hq, "road.decoder");
  Var y = fcn2(params_, "output", hq, false);
  return checked(reshape(y, {B, Q, nx}), "output");
}

Var masked_mae(Var yhat, const Tensor& y, const Tensor& weight) {
  if (yhat.shape() != y.shape() || weight.shape() != y.shape()) {
    throw ShapeError("loss: prediction " + to_string(yhat.shape()) + " vs target " + to_string(y.shape()));
  }
  return mean_abs_masked(sub(yhat, yhat.tape->constant(y)), weight);
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json tensor_to_json(const Tensor& t) {
  nlohmann::ordered_json j;
  j["shape"] = t.shape();
  j["data"] = std::vector<double>(t.data().begin(), t.data().end());
  return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
  try {
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed tensor: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& m, const NormStats& stats) {
  nlohmann::ordered_json j;
  j["format"] = "rkt-checkpoint-1";
  j["config"] = to_json(m.config());
  j["norm_stats"] = {{"x_mean", stats.x_mean}, {"x_std", stats.x_std}, {"z_mean", stats.z_mean}, {"z_std", stats.z_std}};
  j["node2vec.E_X"] = tensor_to_json(m.context().e_x);
  nlohmann::ordered_json ps = nlohmann::ordered_json::object();
  for (const auto& e : m.params()) ps[e.name] = tensor_to_json(e.value);
  j["params"] = std::move(ps);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump() << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  nlohmann::ordered_json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "rkt-checkpoint-1") throw DataError(path.string() + ": not a checkpoint");
  Checkpoint ck;
  ck.config = model_config_from_json(j.at("config"));
  try {
    const auto& ns = j.at("norm_stats");
    ck.stats.x_mean = ns.at("x_mean").get<std::vector<double>>();
    ck.stats.x_std = ns.at("x_std").get<std::vector<double>>();
    ck.stats.z_mean = ns.at("z_mean").get<std::vector<double>>();
    ck.stats.z_std = ns.at("z_std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  ck.e_x = tensor_from_json(j.at("node2vec.E_X"));
  for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it) {
    ck.params.emplace_back(it.key(), tensor_from_json(it.value()));
  }
  return ck;
}

void load_into(Model& m, const Checkpoint& ck) {
  if (!(m.config() == ck.config)) {
    throw ConfigError("checkpoint config " + to_json(ck.config).dump() + " does not match model config " +
                      to_json(m.config()).dump());
  }
  ParamStore& ps = m.params();
  if (ck.params.size() != ps.size()) throw ConfigError("checkpoint parameter count differs from the model");
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& [name, value] = ck.params[i];
    if (ps.entry(i).name != name || ps.entry(i).value.shape() != value.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' does not match the model layout");
    }
  }
  for (std::size_t i = 0; i < ck.params.size(); ++i) ps.entry(i).value = ck.params[i].second;
}

}  // namespace rkt
