#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rkt/autodiff.hpp"
#include "rkt/data.hpp"
#include "rkt/kernels.hpp"
#include "rkt/params.hpp"

namespace rkt {

enum class Variant { Full, NoRegion, NoMask, StaticRegion, CnnSpatial, NoPoi, NoSat };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // ConfigError on unknown names
const std::vector<Variant>& all_variants();

enum class CorrSpan { Train, Full };

struct ModelConfig {
  std::size_t P = 12;
  std::size_t Q = 3;
  std::size_t D = 64;
  std::size_t K = 8;
  std::size_t d_h = 8;  // 0: derived as D / K
  std::size_t L_X = 3;
  std::size_t L_Z = 2;
  double lambda_r = 0.6;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 8;
  GateKind gate_kind = GateKind::Relu;
  CorrSpan corr_span = CorrSpan::Train;
  Variant variant = Variant::Full;
  double sigma0_m = 500.0;

  // Fills a derived d_h and checks every invariant; throws ConfigError.
  void validate();
  AttentionConfig attention() const { return {K, d_h}; }
  bool uses_region() const { return variant != Variant::NoRegion; }
  bool uses_z() const { return uses_region() && variant != Variant::StaticRegion; }
  bool uses_mask() const { return uses_region() && variant != Variant::NoMask; }
};

nlohmann::ordered_json to_json(const ModelConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);
bool operator==(const ModelConfig& a, const ModelConfig& b);

/// Fixed, data-derived inputs of a model: road embedding, cell features,
/// regional adjacency and road-to-cell distances.
struct ModelContext {
  std::size_t n_x = 0;
  std::size_t n_z = 0;
  std::size_t n_h = 0;
  std::size_t n_w = 0;
  Tensor e_x;      // N_X x D
  Tensor geo;      // N_Z x G (empty extent 0 when unused)
  Tensor adj;      // N_Z x N_Z row-normalized
  Tensor dist;     // N_X x N_Z meters
  double sigma_dist = 0.0;
};

// Builds the context from prepared data. When `e_x` is null, node2vec runs
// with the config seed.
ModelContext make_context(const PreparedData& d, const ModelConfig& cfg, const Tensor* e_x = nullptr);

struct ForwardOptions {
  // Replace the bipartite attention output by zeros (sensitivity hook).
  bool zero_bipartite = false;
};

class Model {
 public:
  Model(ModelConfig cfg, ModelContext ctx);

  const ModelConfig& config() const { return cfg_; }
  const ModelContext& context() const { return ctx_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// x: [B, P, N_X], z: [B, P, N_Z] (normalized), tfeat: [B, P+Q, 31].
  /// Returns the normalized prediction [B, Q, N_X]. Throws NumericError
  /// naming the stage whose output stops being finite.
  Var forward(Tape& tape, const Tensor& x, const Tensor& z, const Tensor& tfeat, const ForwardOptions& opt = {});

 private:
  Var region_block(const std::string& name, Var h, Var ste, Var adj);
  Var road_block(const std::string& name, Var h, Var ste);

  ModelConfig cfg_;
  ModelContext ctx_;
  ParamStore params_;
  std::vector<std::int64_t> conv_table_;
};

// Mean |yhat - y| over entries whose weight is nonzero.
Var masked_mae(Var yhat, const Tensor& y, const Tensor& weight);

// Checkpoint: config, normalization stats, the frozen road embedding and every
// parameter as {shape, data}.
void save_checkpoint(const std::filesystem::path& path, const Model& m, const NormStats& stats);

struct Checkpoint {
  ModelConfig config;
  NormStats stats;
  Tensor e_x;
  std::vector<std::pair<std::string, Tensor>> params;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
// Copies checkpoint values into `m`; throws ConfigError when the configs or
// the parameter layout differ.
void load_into(Model& m, const Checkpoint& ck);

nlohmann::ordered_json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace rkt
