#pragma once

// Minimal deterministic feed-forward engine: dense layers, 1-D batch
// normalization, ReLU, softmax cross-entropy, masked momentum SGD and FLOPs
// accounting. Parameters are stored as f32; all arithmetic runs in f64 so
// results are reproducible and gradients survive finite-difference scrutiny.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sparsesoup/data.hpp"
#include "sparsesoup/errors.hpp"
#include "sparsesoup/mask.hpp"
#include "sparsesoup/rng.hpp"
#include "sparsesoup/schedules.hpp"

namespace sparsesoup {

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.1;  // running = (1-m)*running + m*batch

enum class LayerKind : uint8_t { dense = 0, batchnorm = 1, relu = 2 };

struct Layer {
    LayerKind kind = LayerKind::dense;
    std::string name;
    int32_t in = 0;
    int32_t out = 0;                  // feature width for batchnorm/relu
    std::vector<float> weight;        // dense: [out, in] row-major
    std::vector<float> bias;          // dense: [out]
    std::vector<float> gamma, beta;   // batchnorm affine
    std::vector<float> running_mean, running_var;
    bool prunable = false;            // dense weight tensor participates in masks
};

struct ArchSpec {
    std::vector<uint32_t> layer_sizes;  // input, hidden..., output
    bool batchnorm = false;

    bool operator==(const ArchSpec&) const = default;

    void validate() const {
        if (layer_sizes.size() < 2) throw ConfigError("arch: need at least input and output sizes");
        for (uint32_t s : layer_sizes)
            if (s < 1) throw ConfigError("arch: layer sizes must be >= 1");
    }
};

struct ModelState {
    ArchSpec arch;
    std::vector<Layer> layers;
    uint64_t rng_seed = 0;
    bool bn_stale = false;  // set by parameter merging; cleared by recompute_bn

    int32_t input_dim() const { return static_cast<int32_t>(arch.layer_sizes.front()); }
    int32_t output_dim() const { return static_cast<int32_t>(arch.layer_sizes.back()); }

    bool has_batchnorm() const {
        for (const auto& l : layers)
            if (l.kind == LayerKind::batchnorm) return true;
        return false;
    }
};

// ---------------------------------------------------------------------------
// Parameter enumeration
// ---------------------------------------------------------------------------

enum class ParamKind : uint8_t { dense_weight, dense_bias, bn_gamma, bn_beta, bn_running_mean, bn_running_var };

struct TensorInfo {
    std::size_t layer_index;
    ParamKind kind;
    std::string name;
    bool trainable;  // running stats are buffers, not parameters
    bool prunable;
};

/// Visits every tensor in a fixed canonical order. Fn: (const TensorInfo&, vec&).
template <class ModelT, class Fn>
void for_each_tensor(ModelT& model, Fn&& fn) {
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto& l = model.layers[li];
        if (l.kind == LayerKind::dense) {
            fn(TensorInfo{li, ParamKind::dense_weight, l.name + ".weight", true, l.prunable}, l.weight);
            fn(TensorInfo{li, ParamKind::dense_bias, l.name + ".bias", true, false}, l.bias);
        } else if (l.kind == LayerKind::batchnorm) {
            fn(TensorInfo{li, ParamKind::bn_gamma, l.name + ".gamma", true, false}, l.gamma);
            fn(TensorInfo{li, ParamKind::bn_beta, l.name + ".beta", true, false}, l.beta);
            fn(TensorInfo{li, ParamKind::bn_running_mean, l.name + ".running_mean", false, false}, l.running_mean);
            fn(TensorInfo{li, ParamKind::bn_running_var, l.name + ".running_var", false, false}, l.running_var);
        }
    }
}

/// Pointers to the prunable tensors, in mask order.
inline std::vector<const std::vector<float>*> prunable_tensors(const ModelState& m) {
    std::vector<const std::vector<float>*> out;
    for (const auto& l : m.layers)
        if (l.kind == LayerKind::dense && l.prunable) out.push_back(&l.weight);
    return out;
}

inline std::vector<std::vector<float>*> prunable_tensors(ModelState& m) {
    std::vector<std::vector<float>*> out;
    for (auto& l : m.layers)
        if (l.kind == LayerKind::dense && l.prunable) out.push_back(&l.weight);
    return out;
}

inline uint64_t prunable_param_count(const ModelState& m) {
    uint64_t n = 0;
    for (const auto* t : prunable_tensors(m)) n += t->size();
    return n;
}

inline void check_congruent(const ModelState& m, const Mask& mask, const char* where) {
    const auto tensors = prunable_tensors(m);
    if (tensors.size() != mask.tensors.size()) throw ConfigError(std::string(where) + ": mask/model tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i)
        if (tensors[i]->size() != mask.tensors[i].size())
            throw ConfigError(std::string(where) + ": mask/model shape mismatch at tensor " + std::to_string(i));
}

/// All-ones (nothing pruned) mask shaped like the model.
inline Mask full_mask(const ModelState& m) {
    Mask mask;
    for (const auto* t : prunable_tensors(m)) mask.tensors.emplace_back(t->size(), uint8_t{1});
    mask.recount();
    return mask;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

/// Builds an MLP: dense -> [batchnorm] -> relu per hidden layer, final dense
/// producing logits. Weights drawn from U(-b, b), b = sqrt(6 / fan_in);
/// BN starts at mean 0, var 1.
inline ModelState init_model(const ArchSpec& arch, uint64_t seed) {
    arch.validate();
    ModelState m;
    m.arch = arch;
    m.rng_seed = seed;
    Rng rng(seed_mix(seed, 0x696e6974ull));
    const std::size_t n_dense = arch.layer_sizes.size() - 1;
    for (std::size_t i = 0; i < n_dense; ++i) {
        Layer d;
        d.kind = LayerKind::dense;
        d.name = "fc" + std::to_string(i);
        d.in = static_cast<int32_t>(arch.layer_sizes[i]);
        d.out = static_cast<int32_t>(arch.layer_sizes[i + 1]);
        d.prunable = true;
        d.weight.resize(static_cast<std::size_t>(d.in) * d.out);
        d.bias.assign(static_cast<std::size_t>(d.out), 0.0f);
        const double bound = std::sqrt(6.0 / static_cast<double>(d.in));
        for (auto& w : d.weight) w = static_cast<float>(rng.uniform(-bound, bound));
        m.layers.push_back(std::move(d));

        const bool hidden = i + 1 < n_dense;
        if (hidden && arch.batchnorm) {
            Layer bn;
            bn.kind = LayerKind::batchnorm;
            bn.name = "bn" + std::to_string(i);
            bn.out = static_cast<int32_t>(arch.layer_sizes[i + 1]);
            bn.gamma.assign(static_cast<std::size_t>(bn.out), 1.0f);
            bn.beta.assign(static_cast<std::size_t>(bn.out), 0.0f);
            bn.running_mean.assign(static_cast<std::size_t>(bn.out), 0.0f);
            bn.running_var.assign(static_cast<std::size_t>(bn.out), 1.0f);
            m.layers.push_back(std::move(bn));
        }
        if (hidden) {
            Layer r;
            r.kind = LayerKind::relu;
            r.name = "relu" + std::to_string(i);
            r.out = static_cast<int32_t>(arch.layer_sizes[i + 1]);
            m.layers.push_back(std::move(r));
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum class Mode : uint8_t { train, eval };

namespace detail {

// Streaming sums for exact dataset statistics of BN layer inputs,
// keyed by layer index.
struct BnAccumulator {
    struct PerLayer {
        std::vector<double> sum, sum_sq;
    };
    std::vector<PerLayer> layers;  // indexed by model layer index (sparse use)
    uint64_t samples = 0;
};

struct FwdCtx {
    // inputs[li] = activation entering layer li, row-major [B, width]
    std::vector<std::vector<double>> inputs;
    std::vector<double> logits;  // [B, C]
    // batchnorm caches (indexed by layer)
    std::vector<std::vector<double>> bn_xhat;
    std::vector<std::vector<double>> bn_inv_std;  // per-feature
};

inline void check_finite(const std::vector<double>& v, const std::string& layer_name) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError("non-finite activation in layer " + layer_name);
}

// One forward pass over the given sample indices.
// update_running: exponential (momentum 0.1) update of BN running stats.
// accum: when set, train-mode BN additionally accumulates exact input moments.
inline void run_forward(ModelState& model, const Dataset& data, std::span<const uint32_t> idx, Mode mode,
                        bool update_running, BnAccumulator* accum, FwdCtx& ctx) {
    const std::size_t B = idx.size();
    if (B == 0) throw ConfigError("forward: empty batch");
    if (data.dim != model.input_dim()) throw ConfigError("forward: input dim mismatch");
    if (mode == Mode::eval && model.bn_stale && model.has_batchnorm())
        throw ConfigError("forward: batch-norm statistics are stale; run recompute_bn first");

    const std::size_t L = model.layers.size();
    ctx.inputs.assign(L, {});
    ctx.bn_xhat.assign(L, {});
    ctx.bn_inv_std.assign(L, {});
    if (accum && accum->layers.empty()) accum->layers.resize(L);

    std::vector<double> act;
    act.resize(B * static_cast<std::size_t>(data.dim));
    for (std::size_t b = 0; b < B; ++b) {
        const float* r = data.row(idx[b]);
        for (int32_t k = 0; k < data.dim; ++k) act[b * data.dim + k] = static_cast<double>(r[k]);
    }

    for (std::size_t li = 0; li < L; ++li) {
        auto& l = model.layers[li];
        ctx.inputs[li] = act;  // keep the layer input for backward
        switch (l.kind) {
            case LayerKind::dense: {
                std::vector<double> out(B * static_cast<std::size_t>(l.out));
                for (std::size_t b = 0; b < B; ++b) {
                    const double* x = act.data() + b * l.in;
                    double* y = out.data() + b * l.out;
                    for (int32_t o = 0; o < l.out; ++o) {
                        double acc = static_cast<double>(l.bias[o]);
                        const float* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
                        for (int32_t i = 0; i < l.in; ++i) acc += static_cast<double>(w[i]) * x[i];
                        y[o] = acc;
                    }
                }
                act = std::move(out);
                break;
            }
            case LayerKind::batchnorm: {
                const auto d = static_cast<std::size_t>(l.out);
                std::vector<double> mean(d, 0.0), var(d, 0.0), inv_std(d, 0.0);
                if (mode == Mode::train) {
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t k = 0; k < d; ++k) mean[k] += act[b * d + k];
                    for (std::size_t k = 0; k < d; ++k) mean[k] /= static_cast<double>(B);
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t k = 0; k < d; ++k) {
                            const double c = act[b * d + k] - mean[k];
                            var[k] += c * c;
                        }
                    for (std::size_t k = 0; k < d; ++k) var[k] /= static_cast<double>(B);  // biased, for normalization
                    if (update_running) {
                        for (std::size_t k = 0; k < d; ++k) {
                            const double unbiased = B > 1 ? var[k] * static_cast<double>(B) / static_cast<double>(B - 1) : var[k];
                            l.running_mean[k] = static_cast<float>((1.0 - kBnMomentum) * l.running_mean[k] + kBnMomentum * mean[k]);
                            l.running_var[k] = static_cast<float>((1.0 - kBnMomentum) * l.running_var[k] + kBnMomentum * unbiased);
                        }
                    }
                    if (accum) {
                        auto& slot = accum->layers[li];
                        if (slot.sum.empty()) {
                            slot.sum.assign(d, 0.0);
                            slot.sum_sq.assign(d, 0.0);
                        }
                        for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t k = 0; k < d; ++k) {
                                slot.sum[k] += act[b * d + k];
                                slot.sum_sq[k] += act[b * d + k] * act[b * d + k];
                            }
                    }
                } else {
                    for (std::size_t k = 0; k < d; ++k) {
                        mean[k] = static_cast<double>(l.running_mean[k]);
                        var[k] = static_cast<double>(l.running_var[k]);
                    }
                }
                for (std::size_t k = 0; k < d; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + kBnEpsilon);
                std::vector<double> xhat(B * d), out(B * d);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t k = 0; k < d; ++k) {
                        const double h = (act[b * d + k] - mean[k]) * inv_std[k];
                        xhat[b * d + k] = h;
                        out[b * d + k] = static_cast<double>(l.gamma[k]) * h + static_cast<double>(l.beta[k]);
                    }
                ctx.bn_xhat[li] = std::move(xhat);
                ctx.bn_inv_std[li] = std::move(inv_std);
                act = std::move(out);
                break;
            }
            case LayerKind::relu: {
                for (auto& x : act)
                    if (x < 0.0) x = 0.0;
                break;
            }
        }
        check_finite(act, l.name);
    }
    if (accum) accum->samples += B;
    ctx.logits = std::move(act);
}

}  // namespace detail

struct LayerGrads {
    std::vector<double> weight, bias, gamma, beta;
};

struct Grads {
    std::vector<LayerGrads> layers;  // aligned with ModelState::layers
};

struct LossGrad {
    double loss = 0.0;
    Grads grads;
    std::vector<double> logits;  // [B, C]
};

/// Softmax cross-entropy loss, analytic gradients and logits for one batch.
/// Gradients at masked-out coordinates are zeroed. Train mode normalizes BN by
/// batch statistics and updates running stats; eval mode uses running stats.
inline LossGrad loss_and_grad(ModelState& model, const Mask& mask, const Dataset& data,
                              std::span<const uint32_t> idx, Mode mode) {
    check_congruent(model, mask, "loss_and_grad");
    detail::FwdCtx ctx;
    detail::run_forward(model, data, idx, mode, mode == Mode::train, nullptr, ctx);

    const std::size_t B = idx.size();
    const auto C = static_cast<std::size_t>(model.output_dim());

    LossGrad res;
    res.logits = ctx.logits;
    std::vector<double> dact(B * C);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* z = ctx.logits.data() + b * C;
        const int32_t y = data.labels[idx[b]];
        if (y < 0 || static_cast<std::size_t>(y) >= C) throw ConfigError("loss_and_grad: label out of range");
        double zmax = z[0];
        for (std::size_t c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
        double sum_exp = 0.0;
        for (std::size_t c = 0; c < C; ++c) sum_exp += std::exp(z[c] - zmax);
        const double lse = zmax + std::log(sum_exp);
        loss_sum += lse - z[static_cast<std::size_t>(y)];
        for (std::size_t c = 0; c < C; ++c) {
            const double p = std::exp(z[c] - zmax) / sum_exp;
            dact[b * C + c] = (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) / static_cast<double>(B);
        }
    }
    res.loss = loss_sum / static_cast<double>(B);
    if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");

    // Backward.
    res.grads.layers.resize(model.layers.size());
    std::size_t mask_ti = mask.tensors.size();
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const auto& l = model.layers[li];
        auto& g = res.grads.layers[li];
        const auto& x = ctx.inputs[li];
        switch (l.kind) {
            case LayerKind::dense: {
                g.weight.assign(l.weight.size(), 0.0);
                g.bias.assign(l.bias.size(), 0.0);
                std::vector<double> dx(B * static_cast<std::size_t>(l.in), 0.0);
                for (std::size_t b = 0; b < B; ++b) {
                    const double* xb = x.data() + b * l.in;
                    const double* dyb = dact.data() + b * l.out;
                    for (int32_t o = 0; o < l.out; ++o) {
                        const double dy = dyb[o];
                        g.bias[o] += dy;
                        double* gw = g.weight.data() + static_cast<std::size_t>(o) * l.in;
                        const float* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
                        double* dxb = dx.data() + b * l.in;
                        for (int32_t i = 0; i < l.in; ++i) {
                            gw[i] += dy * xb[i];
                            dxb[i] += dy * static_cast<double>(w[i]);
                        }
                    }
                }
                if (l.prunable) {
                    --mask_ti;
                    const auto& bits = mask.tensors[mask_ti];
                    for (std::size_t i = 0; i < bits.size(); ++i)
                        if (!bits[i]) g.weight[i] = 0.0;
                }
                dact = std::move(dx);
                break;
            }
            case LayerKind::batchnorm: {
                const auto d = static_cast<std::size_t>(l.out);
                g.gamma.assign(d, 0.0);
                g.beta.assign(d, 0.0);
                std::vector<double> dx(B * d, 0.0);
                if (mode == Mode::train) {
                    const auto& xhat = ctx.bn_xhat[li];
                    const auto& inv_std = ctx.bn_inv_std[li];
                    std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t k = 0; k < d; ++k) {
                            const double dy = dact[b * d + k];
                            g.beta[k] += dy;
                            g.gamma[k] += dy * xhat[b * d + k];
                            const double dxh = dy * static_cast<double>(l.gamma[k]);
                            sum_dxhat[k] += dxh;
                            sum_dxhat_xhat[k] += dxh * xhat[b * d + k];
                        }
                    const double n = static_cast<double>(B);
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t k = 0; k < d; ++k) {
                            const double dxh = dact[b * d + k] * static_cast<double>(l.gamma[k]);
                            dx[b * d + k] = inv_std[k] / n * (n * dxh - sum_dxhat[k] - xhat[b * d + k] * sum_dxhat_xhat[k]);
                        }
                } else {
                    const auto& xhat = ctx.bn_xhat[li];
                    const auto& inv_std = ctx.bn_inv_std[li];
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t k = 0; k < d; ++k) {
                            const double dy = dact[b * d + k];
                            g.beta[k] += dy;
                            g.gamma[k] += dy * xhat[b * d + k];
                            dx[b * d + k] = dy * static_cast<double>(l.gamma[k]) * inv_std[k];
                        }
                }
                dact = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                for (std::size_t i = 0; i < dact.size(); ++i)
                    if (x[i] <= 0.0) dact[i] = 0.0;
                break;
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimizerState {
    float momentum_coeff = 0.9f;
    float weight_decay = 0.0f;
    struct LayerBufs {
        std::vector<float> weight, bias, gamma, beta;
    };
    std::vector<LayerBufs> layers;
};

inline OptimizerState make_optimizer(const ModelState& m, float momentum = 0.9f, float weight_decay = 0.0f) {
    OptimizerState opt;
    opt.momentum_coeff = momentum;
    opt.weight_decay = weight_decay;
    opt.layers.resize(m.layers.size());
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& l = m.layers[li];
        if (l.kind == LayerKind::dense) {
            opt.layers[li].weight.assign(l.weight.size(), 0.0f);
            opt.layers[li].bias.assign(l.bias.size(), 0.0f);
        } else if (l.kind == LayerKind::batchnorm) {
            opt.layers[li].gamma.assign(l.gamma.size(), 0.0f);
            opt.layers[li].beta.assign(l.beta.size(), 0.0f);
        }
    }
    return opt;
}

namespace detail {

inline void momentum_update(std::vector<float>& param, std::vector<float>& buf, const std::vector<double>& grad,
                            double mu, double wd, double lr, const std::vector<uint8_t>* bits) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        // v is f32 state: round it before it feeds the weight update
        const auto v = static_cast<float>(mu * static_cast<double>(buf[i]) + grad[i] + wd * static_cast<double>(param[i]));
        const double w = static_cast<double>(param[i]) - lr * static_cast<double>(v);
        buf[i] = v;
        param[i] = static_cast<float>(w);
        if (bits && !(*bits)[i]) {
            buf[i] = 0.0f;
            param[i] = 0.0f;
        }
    }
}

}  // namespace detail

/// v <- mu*v + g + wd*w; w <- w - lr*v; mask reapplied to w and v. Weight
/// decay touches dense weights only, never biases or BN parameters.
inline void sgd_step(ModelState& model, OptimizerState& opt, const Grads& grads, float lr, const Mask& mask) {
    if (lr < 0.0f) throw ConfigError("sgd_step: lr must be >= 0");
    check_congruent(model, mask, "sgd_step");
    const double mu = opt.momentum_coeff;
    std::size_t mask_ti = 0;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto& l = model.layers[li];
        const auto& g = grads.layers[li];
        auto& bufs = opt.layers[li];
        if (l.kind == LayerKind::dense) {
            const std::vector<uint8_t>* bits = nullptr;
            if (l.prunable) bits = &mask.tensors[mask_ti++];
            detail::momentum_update(l.weight, bufs.weight, g.weight, mu, opt.weight_decay, lr, bits);
            detail::momentum_update(l.bias, bufs.bias, g.bias, mu, 0.0, lr, nullptr);
        } else if (l.kind == LayerKind::batchnorm) {
            detail::momentum_update(l.gamma, bufs.gamma, g.gamma, mu, 0.0, lr, nullptr);
            detail::momentum_update(l.beta, bufs.beta, g.beta, mu, 0.0, lr, nullptr);
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop and evaluation
// ---------------------------------------------------------------------------

/// Deterministic masked training: batch order drawn from (seed, epoch), LR per
/// global step from the schedule. epoch_offset shifts both the schedule
/// position and the batch-order stream so a run can resume mid-curve (used by
/// the pruning-during-training loop).
inline ModelState train(ModelState model, const Mask& mask, OptimizerState opt, const Dataset& data,
                        const RetrainSchedule& schedule, uint32_t epochs, uint32_t batch_size, uint64_t seed,
                        uint64_t epoch_offset = 0) {
    schedule.validate();
    if (data.size() == 0) throw ConfigError("train: empty dataset");
    const auto steps_per_epoch = static_cast<uint32_t>((data.size() + batch_size - 1) / batch_size);
    uint64_t step = epoch_offset * steps_per_epoch;
    for (uint32_t e = 0; e < epochs; ++e) {
        const auto batch_list = batches(data, batch_size, seed_mix(seed, 0x65706f6368ull, epoch_offset + e), false);
        for (const auto& batch : batch_list) {
            const float lr = lr_at(schedule, step, steps_per_epoch);
            const auto lg = loss_and_grad(model, mask, data, batch, Mode::train);
            sgd_step(model, opt, lg.grads, lr, mask);
            ++step;
        }
    }
    return model;
}

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Top-1 accuracy and mean cross-entropy in eval mode. Logit ties break toward
/// the lowest class index, and results are independent of any batching.
inline EvalResult evaluate(const ModelState& model, const Dataset& data) {
    if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
    std::vector<uint32_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0u);
    detail::FwdCtx ctx;
    auto& mutable_model = const_cast<ModelState&>(model);  // eval mode leaves the model untouched
    detail::run_forward(mutable_model, data, idx, Mode::eval, false, nullptr, ctx);

    const auto C = static_cast<std::size_t>(model.output_dim());
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < data.size(); ++b) {
        const double* z = ctx.logits.data() + b * C;
        std::size_t arg = 0;
        double best = z[0];
        for (std::size_t c = 1; c < C; ++c)
            if (z[c] > best) {
                best = z[c];
                arg = c;
            }
        if (static_cast<int32_t>(arg) == data.labels[b]) ++correct;
        double zmax = z[0];
        for (std::size_t c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
        double sum_exp = 0.0;
        for (std::size_t c = 0; c < C; ++c) sum_exp += std::exp(z[c] - zmax);
        loss_sum += zmax + std::log(sum_exp) - z[static_cast<std::size_t>(data.labels[b])];
    }
    return {static_cast<double>(correct) / static_cast<double>(data.size()), loss_sum / static_cast<double>(data.size())};
}

// ---------------------------------------------------------------------------
// FLOPs accounting
// ---------------------------------------------------------------------------

struct FlopsReport {
    uint64_t dense_flops = 0;   // F_d
    uint64_t sparse_flops = 0;  // F_s
    uint64_t speedup_num = 1;   // F_d / F_s as a reduced rational
    uint64_t speedup_den = 1;

    double speedup() const { return static_cast<double>(speedup_num) / static_cast<double>(speedup_den); }
};

/// F_d = sum over dense layers of 2*in*out multiply-adds; F_s counts only
/// unmasked weights. A pure function of the mask, not of weight values.
inline FlopsReport count_flops(const ModelState& model, const Mask& mask) {
    check_congruent(model, mask, "count_flops");
    FlopsReport r;
    std::size_t mask_ti = 0;
    for (const auto& l : model.layers) {
        if (l.kind != LayerKind::dense) continue;
        const uint64_t full = 2ull * static_cast<uint64_t>(l.in) * static_cast<uint64_t>(l.out);
        r.dense_flops += full;
        if (l.prunable) {
            uint64_t kept = 0;
            for (uint8_t b : mask.tensors[mask_ti]) kept += b;
            ++mask_ti;
            r.sparse_flops += 2ull * kept;
        } else {
            r.sparse_flops += full;
        }
    }
    if (r.sparse_flops == 0) throw NumericError("count_flops: fully pruned model has no FLOPs");
    const uint64_t g = std::gcd(r.dense_flops, r.sparse_flops);
    r.speedup_num = r.dense_flops / g;
    r.speedup_den = r.sparse_flops / g;
    return r;
}

}  // namespace sparsesoup
