#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchwork/layers.hpp"

namespace patchwork {

struct LayerSpec {
  enum class Type { kConv, kPool, kRelu, kLrn, kBatchNorm, kFc, kSoftmaxXent };
  Type type = Type::kRelu;
  int kernel = 0, out_channels = 0, stride = 1, pad = 0;  // conv / pool
  int lrn_size = 5;
  double lrn_alpha = 1e-4, lrn_beta = 0.75, lrn_k = 2.0;
  double bn_eps = 1e-5;
  int fc_out = 0;
  int classes = 0;

  static LayerSpec conv(int kernel, int out_channels, int stride, int pad);
  static LayerSpec pool(int kernel, int stride);
  static LayerSpec relu();
  static LayerSpec lrn(int size = 5, double alpha = 1e-4, double beta = 0.75, double k = 2.0);
  static LayerSpec batchnorm(double eps = 1e-5);
  static LayerSpec fc(int out);
  static LayerSpec softmax_xent(int classes);
};

using NetSpec = std::vector<LayerSpec>;

nlohmann::json netspec_to_json(const NetSpec& spec);
NetSpec netspec_from_json(const nlohmann::json& j);

// A sequential stack instantiated from a NetSpec. Channel counts and feature
// dims are inferred by tracing the input shape through the spec, so the
// constructor needs the input dimensions (without batch).
class Net {
 public:
  Net() = default;
  Net(const NetSpec& spec, std::vector<int64_t> input_dims, Rng& init_rng,
      const std::string& prefix = "");

  Tensor forward(const Tensor& x, Phase phase);
  // Runs forward only through the layer with the given name (inclusive).
  Tensor forward_to(const Tensor& x, Phase phase, const std::string& layer_name);
  Tensor backward(const Tensor& dy);

  std::vector<Param*> params();
  std::vector<StatBuf*> stats();
  void zero_grad();

  const NetSpec& spec() const { return spec_; }
  int softmax_classes() const { return softmax_classes_; }
  const std::vector<int64_t>& input_dims() const { return input_dims_; }
  const std::vector<int64_t>& output_dims() const { return output_dims_; }
  std::vector<std::string> layer_names() const;
  // Name of the last layer, useful as the default embedding tap.
  std::string last_layer_name() const;

 private:
  NetSpec spec_;
  std::vector<int64_t> input_dims_, output_dims_;
  std::vector<std::unique_ptr<Layer>> layers_;
  int softmax_classes_ = 0;
};

// Ordered name -> tensor snapshot of everything a run needs to resume or
// evaluate: parameter values plus running statistics.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> stats;

  const Tensor* find_param(const std::string& name) const;
  const Tensor* find_stat(const std::string& name) const;
};

Checkpoint snapshot_net(Net& net);
void restore_net(Net& net, const Checkpoint& ckpt);

// Binary container, magic "CPNET1", little-endian payloads, f64 weights.
// Writes are atomic (temp file + rename) and byte-stable for identical nets.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace patchwork
