#include "patchwork/net.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "patchwork/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace patchwork {

LayerSpec LayerSpec::conv(int kernel, int out_channels, int stride, int pad) {
  LayerSpec s;
  s.type = Type::kConv;
  s.kernel = kernel;
  s.out_channels = out_channels;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::pool(int kernel, int stride) {
  LayerSpec s;
  s.type = Type::kPool;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.type = Type::kRelu;
  return s;
}

LayerSpec LayerSpec::lrn(int size, double alpha, double beta, double k) {
  LayerSpec s;
  s.type = Type::kLrn;
  s.lrn_size = size;
  s.lrn_alpha = alpha;
  s.lrn_beta = beta;
  s.lrn_k = k;
  return s;
}

LayerSpec LayerSpec::batchnorm(double eps) {
  LayerSpec s;
  s.type = Type::kBatchNorm;
  s.bn_eps = eps;
  return s;
}

LayerSpec LayerSpec::fc(int out) {
  LayerSpec s;
  s.type = Type::kFc;
  s.fc_out = out;
  return s;
}

LayerSpec LayerSpec::softmax_xent(int classes) {
  LayerSpec s;
  s.type = Type::kSoftmaxXent;
  s.classes = classes;
  return s;
}

namespace {

const char* type_name(LayerSpec::Type t) {
  switch (t) {
    case LayerSpec::Type::kConv: return "conv";
    case LayerSpec::Type::kPool: return "pool";
    case LayerSpec::Type::kRelu: return "relu";
    case LayerSpec::Type::kLrn: return "lrn";
    case LayerSpec::Type::kBatchNorm: return "batchnorm";
    case LayerSpec::Type::kFc: return "fc";
    case LayerSpec::Type::kSoftmaxXent: return "softmax_xent";
  }
  return "?";
}

}  // namespace

json netspec_to_json(const NetSpec& spec) {
  json arr = json::array();
  for (const LayerSpec& s : spec) {
    json j{{"type", type_name(s.type)}};
    switch (s.type) {
      case LayerSpec::Type::kConv:
        j["kernel"] = s.kernel;
        j["out_channels"] = s.out_channels;
        j["stride"] = s.stride;
        j["pad"] = s.pad;
        break;
      case LayerSpec::Type::kPool:
        j["kernel"] = s.kernel;
        j["stride"] = s.stride;
        break;
      case LayerSpec::Type::kLrn:
        j["size"] = s.lrn_size;
        j["alpha"] = s.lrn_alpha;
        j["beta"] = s.lrn_beta;
        j["k"] = s.lrn_k;
        break;
      case LayerSpec::Type::kBatchNorm:
        j["eps"] = s.bn_eps;
        break;
      case LayerSpec::Type::kFc:
        j["out"] = s.fc_out;
        break;
      case LayerSpec::Type::kSoftmaxXent:
        j["classes"] = s.classes;
        break;
      case LayerSpec::Type::kRelu:
        break;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

NetSpec netspec_from_json(const json& arr) {
  NetSpec spec;
  for (const json& j : arr) {
    const std::string t = j.at("type").get<std::string>();
    if (t == "conv") {
      spec.push_back(LayerSpec::conv(j.at("kernel"), j.at("out_channels"), j.at("stride"),
                                     j.at("pad")));
    } else if (t == "pool") {
      spec.push_back(LayerSpec::pool(j.at("kernel"), j.at("stride")));
    } else if (t == "relu") {
      spec.push_back(LayerSpec::relu());
    } else if (t == "lrn") {
      spec.push_back(LayerSpec::lrn(j.at("size"), j.at("alpha"), j.at("beta"), j.at("k")));
    } else if (t == "batchnorm") {
      spec.push_back(LayerSpec::batchnorm(j.at("eps")));
    } else if (t == "fc") {
      spec.push_back(LayerSpec::fc(j.at("out")));
    } else if (t == "softmax_xent") {
      spec.push_back(LayerSpec::softmax_xent(j.at("classes")));
    } else {
      throw IoError(IoErrorKind::kCorruptPayload, "unknown layer type '" + t + "' in net spec");
    }
  }
  return spec;
}

Net::Net(const NetSpec& spec, std::vector<int64_t> input_dims, Rng& init_rng,
         const std::string& prefix)
    : spec_(spec), input_dims_(input_dims) {
  std::vector<int64_t> dims = std::move(input_dims);  // without batch
  int n_conv = 0, n_pool = 0, n_relu = 0, n_lrn = 0, n_bn = 0, n_fc = 0;
  auto flat = [&dims]() {
    int64_t f = 1;
    for (int64_t d : dims) f *= d;
    return f;
  };
  for (const LayerSpec& s : spec_) {
    std::unique_ptr<Layer> layer;
    std::string name;
    switch (s.type) {
      case LayerSpec::Type::kConv: {
        if (dims.size() != 3) {
          throw ConfigError("conv layer needs CHW input, have " + shape_str(dims));
        }
        layer = std::make_unique<Conv2d>(static_cast<int>(dims[0]), s.out_channels, s.kernel,
                                         s.stride, s.pad, init_rng);
        dims = {s.out_channels, (dims[1] + 2 * s.pad - s.kernel) / s.stride + 1,
                (dims[2] + 2 * s.pad - s.kernel) / s.stride + 1};
        name = "conv" + std::to_string(++n_conv);
        break;
      }
      case LayerSpec::Type::kPool: {
        if (dims.size() != 3) {
          throw ConfigError("pool layer needs CHW input, have " + shape_str(dims));
        }
        layer = std::make_unique<MaxPool2d>(s.kernel, s.stride);
        dims = {dims[0], (dims[1] - s.kernel) / s.stride + 1, (dims[2] - s.kernel) / s.stride + 1};
        name = "pool" + std::to_string(++n_pool);
        break;
      }
      case LayerSpec::Type::kRelu:
        layer = std::make_unique<Relu>();
        name = "relu" + std::to_string(++n_relu);
        break;
      case LayerSpec::Type::kLrn:
        if (dims.size() != 3) {
          throw ConfigError("lrn layer needs CHW input, have " + shape_str(dims));
        }
        layer = std::make_unique<Lrn>(s.lrn_size, s.lrn_alpha, s.lrn_beta, s.lrn_k);
        name = "lrn" + std::to_string(++n_lrn);
        break;
      case LayerSpec::Type::kBatchNorm:
        layer = std::make_unique<BatchNormNA>(static_cast<int>(dims[0]), s.bn_eps);
        name = "bn" + std::to_string(++n_bn);
        break;
      case LayerSpec::Type::kFc:
        layer = std::make_unique<Fc>(flat(), s.fc_out, init_rng);
        dims = {s.fc_out};
        name = "fc" + std::to_string(++n_fc);
        break;
      case LayerSpec::Type::kSoftmaxXent:
        if (dims.size() != 1 || dims[0] != s.classes) {
          throw ConfigError("softmax head expects " + std::to_string(s.classes) +
                            " logits, have " + shape_str(dims));
        }
        softmax_classes_ = s.classes;
        continue;  // the loss head is applied by the trainer, not stored as a layer
    }
    layer->set_name(prefix + name);
    layers_.push_back(std::move(layer));
  }
  output_dims_ = dims;
}

Tensor Net::forward(const Tensor& x, Phase phase) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h, phase);
  return h;
}

Tensor Net::forward_to(const Tensor& x, Phase phase, const std::string& layer_name) {
  Tensor h = x;
  for (auto& layer : layers_) {
    h = layer->forward(h, phase);
    if (layer->name() == layer_name) return h;
  }
  throw ConfigError("layer '" + layer_name + "' not found in net");
}

Tensor Net::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param*> Net::params() {
  std::vector<Param*> out;
  for (auto& layer : layers_) {
    auto ps = layer->params();
    for (size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->name.empty()) {
        ps[i]->name = layer->name() + (i == 0 ? ".w" : ".b");
      }
      out.push_back(ps[i]);
    }
  }
  return out;
}

std::vector<StatBuf*> Net::stats() {
  std::vector<StatBuf*> out;
  for (auto& layer : layers_) {
    auto ss = layer->stats();
    for (size_t i = 0; i < ss.size(); ++i) {
      if (ss[i]->name.empty()) {
        ss[i]->name = layer->name() + (i == 0 ? ".running_mean" : ".running_var");
      }
      out.push_back(ss[i]);
    }
  }
  return out;
}

void Net::zero_grad() {
  for (Param* p : params()) p->grad.zero();
}

std::vector<std::string> Net::layer_names() const {
  std::vector<std::string> names;
  for (const auto& layer : layers_) names.push_back(layer->name());
  return names;
}

std::string Net::last_layer_name() const {
  if (layers_.empty()) throw ConfigError("empty net has no layers");
  return layers_.back()->name();
}

const Tensor* Checkpoint::find_param(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor* Checkpoint::find_stat(const std::string& name) const {
  for (const auto& [n, t] : stats) {
    if (n == name) return &t;
  }
  return nullptr;
}

Checkpoint snapshot_net(Net& net) {
  Checkpoint c;
  for (Param* p : net.params()) c.params.emplace_back(p->name, p->value);
  for (StatBuf* s : net.stats()) c.stats.emplace_back(s->name, s->value);
  return c;
}

void restore_net(Net& net, const Checkpoint& ckpt) {
  for (Param* p : net.params()) {
    const Tensor* t = ckpt.find_param(p->name);
    if (t == nullptr) {
      throw IoError(IoErrorKind::kDataMismatch, "checkpoint is missing parameter " + p->name);
    }
    if (t->shape != p->value.shape) {
      throw IoError(IoErrorKind::kDataMismatch,
                    "checkpoint parameter " + p->name + " has shape " + shape_str(*t) +
                        ", net expects " + shape_str(p->value));
    }
    p->value = *t;
  }
  for (StatBuf* s : net.stats()) {
    const Tensor* t = ckpt.find_stat(s->name);
    if (t == nullptr) {
      throw IoError(IoErrorKind::kDataMismatch, "checkpoint is missing statistic " + s->name);
    }
    if (t->shape != s->value.shape) {
      throw IoError(IoErrorKind::kDataMismatch,
                    "checkpoint statistic " + s->name + " has shape " + shape_str(*t) +
                        ", net expects " + shape_str(s->value));
    }
    s->value = *t;
  }
}

namespace {

constexpr char kMagic[6] = {'C', 'P', 'N', 'E', 'T', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void get(std::istream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(IoErrorKind::kCorruptPayload, "truncated checkpoint " + path);
}

void write_block(std::ostream& out, const std::vector<std::pair<std::string, Tensor>>& block) {
  put(out, static_cast<uint32_t>(block.size()));
  for (const auto& [name, tensor] : block) {
    put(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<uint32_t>(tensor.shape.size()));
    for (int64_t d : tensor.shape) put(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(double)));
  }
}

void read_block(std::istream& in, std::vector<std::pair<std::string, Tensor>>& block,
                const std::string& path) {
  uint32_t count = 0;
  get(in, count, path);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    get(in, name_len, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError(IoErrorKind::kCorruptPayload, "truncated checkpoint " + path);
    uint32_t rank = 0;
    get(in, rank, path);
    std::vector<int64_t> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      uint64_t e = 0;
      get(in, e, path);
      shape[d] = static_cast<int64_t>(e);
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw IoError(IoErrorKind::kCorruptPayload, "truncated checkpoint " + path);
    block.emplace_back(std::move(name), std::move(t));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write checkpoint " + tmp);
    out.write(kMagic, sizeof(kMagic));
    write_block(out, ckpt.params);
    write_block(out, ckpt.stats);
    if (!out) throw IoError(IoErrorKind::kUnwritable, "short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    throw IoError(IoErrorKind::kUnwritable, "cannot move checkpoint into place at " + path + ": " +
                                                ec.message());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open checkpoint " + path);
  char magic[6] = {0};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(IoErrorKind::kUnsupportedFormat, path + " is not a CPNET1 checkpoint");
  }
  Checkpoint c;
  read_block(in, c.params, path);
  read_block(in, c.stats, path);
  return c;
}

}  // namespace patchwork
