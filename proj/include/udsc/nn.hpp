#pragma once

// Parameter registry, transformer building blocks and the AdamW optimizer
// used by every trainable part of the system.

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "udsc/autodiff.hpp"

namespace udsc::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using Rng = std::mt19937_64;

enum class Init { zeros, ones, xavier, normal };

class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;

    Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init,
                      Rng& rng, bool decay = true);
    Parameter& get(const std::string& name);
    const Parameter* find(const std::string& name) const;

    // Name-ordered views.
    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;

    long long count() const;
    long long count(const std::function<bool(const std::string&)>& keep) const;
    void zero_grad();

private:
    std::map<std::string, std::unique_ptr<Parameter>> params_;
};

struct Linear {
    Parameter* weight = nullptr;
    Parameter* bias = nullptr;

    Linear() = default;
    Linear(ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng);
    Var operator()(Tape& t, Var x) const;
};

struct LayerNorm {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& prefix, int dim, Rng& rng);
    Var operator()(Tape& t, Var x) const;
};

struct MultiHeadAttention {
    Linear query, key, value, out;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterStore& store, const std::string& prefix, int dim, int heads, Rng& rng);
    // `queries` and `memory` each hold `blocks` equally sized row groups.
    Var operator()(Tape& t, Var queries, Var memory, int blocks) const;
};

struct FeedForward {
    Linear up, down;

    FeedForward() = default;
    FeedForward(ParameterStore& store, const std::string& prefix, int dim, int hidden, Rng& rng);
    Var operator()(Tape& t, Var x) const;
};

// Pre-norm transformer encoder layer.
struct EncoderLayer {
    LayerNorm norm1, norm2;
    MultiHeadAttention attention;
    FeedForward ff;

    EncoderLayer() = default;
    EncoderLayer(ParameterStore& store, const std::string& prefix, int dim, int heads, int hidden,
                 Rng& rng);
    Var operator()(Tape& t, Var x, int blocks) const;
};

// Pre-norm transformer decoder layer: self-attention over the query sequence,
// cross-attention into the received features, then a feed-forward block.
struct DecoderLayer {
    LayerNorm norm1, norm2, norm3;
    MultiHeadAttention self_attention, cross_attention;
    FeedForward ff;

    DecoderLayer() = default;
    DecoderLayer(ParameterStore& store, const std::string& prefix, int dim, int heads, int hidden,
                 Rng& rng);
    Var operator()(Tape& t, Var queries, Var memory, int blocks) const;
};

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-3;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
};

// Decoupled weight decay Adam. Only parameters touched by the last tape are
// updated, so heads and layers that did not take part in a step stay fixed.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(ParameterStore& store);
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
};

} // namespace udsc::nn
