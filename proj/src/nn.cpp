#include "udsc/nn.hpp"

#include <cmath>

#include "udsc/error.hpp"

namespace udsc::nn {

Parameter& ParameterStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                  Init init, Rng& rng, bool decay) {
    if (params_.count(name))
        throw Error(ErrorCode::invalid_argument, "duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->decay = decay;
    switch (init) {
    case Init::zeros: p->value = Matrix::Zero(rows, cols); break;
    case Init::ones: p->value = Matrix::Ones(rows, cols); break;
    case Init::xavier: {
        const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> u(-limit, limit);
        p->value.resize(rows, cols);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
        break;
    }
    case Init::normal: {
        std::normal_distribution<double> nd(0.0, 0.02);
        p->value.resize(rows, cols);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = nd(rng);
        break;
    }
    }
    p->grad = Matrix::Zero(rows, cols);
    p->moment1 = Matrix::Zero(rows, cols);
    p->moment2 = Matrix::Zero(rows, cols);
    auto& ref = *p;
    params_.emplace(name, std::move(p));
    return ref;
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::invalid_argument, "no parameter '" + name + "'");
    return *it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
}

std::vector<Parameter*> ParameterStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& [name, p] : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& [name, p] : params_) out.push_back(p.get());
    return out;
}

long long ParameterStore::count() const {
    return count([](const std::string&) { return true; });
}

long long ParameterStore::count(const std::function<bool(const std::string&)>& keep) const {
    long long n = 0;
    for (const auto& [name, p] : params_)
        if (keep(name)) n += p->size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
}

Linear::Linear(ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng)
    : weight(&store.create(prefix + ".weight", in, out, Init::xavier, rng)),
      bias(&store.create(prefix + ".bias", 1, out, Init::zeros, rng, false)) {}

Var Linear::operator()(Tape& t, Var x) const {
    return ad::linear(x, t.param(*weight), t.param(*bias));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& prefix, int dim, Rng& rng)
    : gamma(&store.create(prefix + ".gamma", 1, dim, Init::ones, rng, false)),
      beta(&store.create(prefix + ".beta", 1, dim, Init::zeros, rng, false)) {}

Var LayerNorm::operator()(Tape& t, Var x) const {
    return ad::layer_norm(x, t.param(*gamma), t.param(*beta));
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& prefix, int dim,
                                       int heads_, Rng& rng)
    : query(store, prefix + ".q", dim, dim, rng),
      key(store, prefix + ".k", dim, dim, rng),
      value(store, prefix + ".v", dim, dim, rng),
      out(store, prefix + ".o", dim, dim, rng),
      heads(heads_) {
    if (heads <= 0 || dim % heads != 0)
        throw Error(ErrorCode::invalid_argument, "width " + std::to_string(dim) +
                                                     " is not divisible by " + std::to_string(heads) +
                                                     " heads");
}

Var MultiHeadAttention::operator()(Tape& t, Var queries, Var memory, int blocks) const {
    Var q = query(t, queries);
    Var k = key(t, memory);
    Var v = value(t, memory);
    return out(t, ad::multi_head_attention(q, k, v, heads, blocks));
}

FeedForward::FeedForward(ParameterStore& store, const std::string& prefix, int dim, int hidden, Rng& rng)
    : up(store, prefix + ".up", dim, hidden, rng), down(store, prefix + ".down", hidden, dim, rng) {}

Var FeedForward::operator()(Tape& t, Var x) const { return down(t, ad::relu(up(t, x))); }

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& prefix, int dim, int heads,
                           int hidden, Rng& rng)
    : norm1(store, prefix + ".norm1", dim, rng),
      norm2(store, prefix + ".norm2", dim, rng),
      attention(store, prefix + ".attn", dim, heads, rng),
      ff(store, prefix + ".ff", dim, hidden, rng) {}

Var EncoderLayer::operator()(Tape& t, Var x, int blocks) const {
    Var h = norm1(t, x);
    x = ad::add(x, attention(t, h, h, blocks));
    return ad::add(x, ff(t, norm2(t, x)));
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& prefix, int dim, int heads,
                           int hidden, Rng& rng)
    : norm1(store, prefix + ".norm1", dim, rng),
      norm2(store, prefix + ".norm2", dim, rng),
      norm3(store, prefix + ".norm3", dim, rng),
      self_attention(store, prefix + ".self_attn", dim, heads, rng),
      cross_attention(store, prefix + ".cross_attn", dim, heads, rng),
      ff(store, prefix + ".ff", dim, hidden, rng) {}

Var DecoderLayer::operator()(Tape& t, Var queries, Var memory, int blocks) const {
    Var h = norm1(t, queries);
    Var x = ad::add(queries, self_attention(t, h, h, blocks));
    x = ad::add(x, cross_attention(t, norm2(t, x), memory, blocks));
    return ad::add(x, ff(t, norm3(t, x)));
}

void AdamW::step(ParameterStore& store) {
    std::vector<Parameter*> active;
    for (Parameter* p : store.all())
        if (p->touched) active.push_back(p);

    double clip_scale = 1.0;
    if (cfg_.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Parameter* p : active) sq += p->grad.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) clip_scale = cfg_.grad_clip / norm;
    }

    for (Parameter* p : active) {
        ++p->steps;
        const Matrix g = p->grad * clip_scale;
        p->moment1 = cfg_.beta1 * p->moment1 + (1.0 - cfg_.beta1) * g;
        p->moment2 = cfg_.beta2 * p->moment2 + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(p->steps));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(p->steps));
        if (p->decay) p->value *= (1.0 - cfg_.lr * cfg_.weight_decay);
        p->value.array() -= cfg_.lr * (p->moment1.array() / bc1) /
                            ((p->moment2.array() / bc2).sqrt() + cfg_.eps);
    }
}

} // namespace udsc::nn
