#include "udsc/encoders.hpp"

#include <string>

#include "udsc/error.hpp"

namespace udsc {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::config_invalid, msg); };
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) fail("model.d_model must be divisible by model.heads");
    if (ff_dim <= 0) fail("model.ff_dim must be positive");
    if (image_layers < 1 || text_layers < 1) fail("encoder layer counts must be >= 1");
    if (decoder_layers < 1 || decoder_layers > ExitTable::kMaxLayers) fail("model.decoder_layers must be in [1, 8]");
    if (symbols_per_row < 1) fail("model.symbols_per_row must be >= 1");
    if (patch_size < 1 || image_size % patch_size != 0) fail("model.image_size must be divisible by model.patch_size");
    if (channels < 1 || text_len < 1) fail("model.channels and model.text_len must be >= 1");
    if (retrieval_dim < 1) fail("model.retrieval_dim must be >= 1");
    if (triplet_margin < 0.0) fail("model.triplet_margin must be >= 0");
}

} // namespace udsc

namespace udsc::encoders {

namespace {

std::vector<int> repeat_zero(int n) { return std::vector<int>(static_cast<std::size_t>(n), 0); }

} // namespace

SemanticEncoder::SemanticEncoder(nn::ParameterStore& store, const ModelConfig& cfg, Modality modality,
                                 nn::Rng& rng)
    : modality_(modality),
      positions_(modality == Modality::image ? cfg.image_rows() : cfg.text_len),
      width_(cfg.d_model) {
    const std::string p = prefix();
    if (modality == Modality::image) {
        patch_embedding_ = nn::Linear(store, p + ".patch_embed", cfg.patch_dim(), cfg.d_model, rng);
    } else {
        if (cfg.vocab_size <= 0) throw Error(ErrorCode::config_invalid, "text encoder needs a vocabulary");
        token_table_ = &store.create(p + ".tokens", cfg.vocab_size, cfg.d_model, nn::Init::normal, rng);
    }
    position_table_ = &store.create(p + ".pos", positions_, cfg.d_model, nn::Init::normal, rng);
    for (TaskId t : kAllTasks)
        if (task_spec(t).uses(modality))
            task_embeddings_[t] = &store.create(p + ".task." + std::string(to_string(t)), 1, cfg.d_model,
                                                nn::Init::normal, rng);
    const int layers = modality == Modality::image ? cfg.image_layers : cfg.text_layers;
    for (int i = 0; i < layers; ++i)
        layers_.emplace_back(store, p + ".layer" + std::to_string(i), cfg.d_model, cfg.heads, cfg.ff_dim, rng);
}

std::string SemanticEncoder::prefix() const { return "enc." + std::string(to_string(modality_)); }

Var SemanticEncoder::encode_patches(Tape& t, const Matrix& patches, int batch, TaskId task) const {
    if (modality_ != Modality::image) throw Error(ErrorCode::invalid_argument, "text encoder given patches");
    if (batch <= 0 || patches.rows() != static_cast<Eigen::Index>(batch) * positions_)
        throw Error(ErrorCode::dimension_mismatch,
                    "encode_image: expected " + std::to_string(positions_) + " patches per sample");
    Var x = patch_embedding_(t, t.constant(patches));
    return run(t, x, batch, task);
}

Var SemanticEncoder::encode_tokens(Tape& t, std::span<const int> tokens, int batch, TaskId task) const {
    if (modality_ != Modality::text) throw Error(ErrorCode::invalid_argument, "image encoder given tokens");
    if (batch <= 0 || tokens.size() != static_cast<std::size_t>(batch) * static_cast<std::size_t>(positions_))
        throw Error(ErrorCode::dimension_mismatch,
                    "encode_text: expected " + std::to_string(positions_) + " tokens per sample");
    Var x = ad::gather_rows(t.param(*token_table_), tokens);
    return run(t, x, batch, task);
}

Var SemanticEncoder::run(Tape& t, Var embedded, int batch, TaskId task) const {
    auto it = task_embeddings_.find(task);
    if (it == task_embeddings_.end())
        throw Error(ErrorCode::unknown_task, "task " + std::string(to_string(task)) + " does not use the " +
                                                 std::string(to_string(modality_)) + " encoder");
    Var x = ad::add_tiled(embedded, t.param(*position_table_));
    Var task_rows = ad::gather_rows(t.param(*it->second), repeat_zero(batch));

    // Per sample: [w_task, x_1 .. x_L].
    const int len = positions_;
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(batch * (len + 1)));
    for (int b = 0; b < batch; ++b) {
        order.push_back(batch * len + b);
        for (int i = 0; i < len; ++i) order.push_back(b * len + i);
    }
    const Var parts[] = {x, task_rows};
    Var seq = ad::gather_rows(ad::concat_rows(parts), order);
    for (const auto& layer : layers_) seq = layer(t, seq, batch);
    seq = ad::layer_norm(seq, Var{}, Var{});

    std::vector<int> keep;
    keep.reserve(static_cast<std::size_t>(batch * len));
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < len; ++i) keep.push_back(b * (len + 1) + 1 + i);
    return ad::gather_rows(seq, keep);
}

ChannelEncoder::ChannelEncoder(nn::ParameterStore& store, const ModelConfig& cfg, Modality modality,
                               nn::Rng& rng)
    : hidden_(store, "chenc." + std::string(to_string(modality)) + ".hidden", cfg.d_model, cfg.d_model, rng),
      out_(store, "chenc." + std::string(to_string(modality)) + ".out", cfg.d_model, 2 * cfg.symbols_per_row,
           rng) {}

Var ChannelEncoder::compress(Tape& t, Var features) const {
    return out_(t, ad::relu(hidden_(t, features)));
}

Var ChannelEncoder::operator()(Tape& t, Var features, int rows_per_block) const {
    return ad::power_normalize_blocks(compress(t, features), rows_per_block);
}

ChannelSymbols pack_symbols(const Matrix& rows) {
    if (rows.cols() % 2 != 0) throw Error(ErrorCode::dimension_mismatch, "pack_symbols: odd row width");
    const Eigen::Index k = rows.cols() / 2;
    ChannelSymbols out;
    out.symbols.resize(rows.rows() * k);
    out.index_map.reserve(static_cast<std::size_t>(rows.rows() * k));
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
        for (Eigen::Index j = 0; j < k; ++j) {
            out.symbols(r * k + j) = channel::Complex(rows(r, 2 * j), rows(r, 2 * j + 1));
            out.index_map.push_back({static_cast<int>(r), static_cast<int>(j)});
        }
    return out;
}

Matrix unpack_symbols(const channel::ComplexVector& symbols, const std::vector<SymbolSource>& index_map,
                      int symbols_per_row) {
    if (static_cast<std::size_t>(symbols.size()) != index_map.size() || symbols_per_row <= 0 ||
        index_map.size() % static_cast<std::size_t>(symbols_per_row) != 0)
        throw Error(ErrorCode::dimension_mismatch, "channel_decode: symbol count does not match the index map");
    const Eigen::Index rows = static_cast<Eigen::Index>(index_map.size()) / symbols_per_row;
    Matrix out = Matrix::Zero(rows, 2 * symbols_per_row);
    std::vector<int> seen(index_map.size(), 0);
    for (std::size_t i = 0; i < index_map.size(); ++i) {
        const SymbolSource& s = index_map[i];
        if (s.row < 0 || s.row >= rows || s.slot < 0 || s.slot >= symbols_per_row)
            throw Error(ErrorCode::dimension_mismatch, "channel_decode: index map entry out of range");
        out(s.row, 2 * s.slot) = symbols(static_cast<Eigen::Index>(i)).real();
        out(s.row, 2 * s.slot + 1) = symbols(static_cast<Eigen::Index>(i)).imag();
        if (++seen[static_cast<std::size_t>(s.row * symbols_per_row + s.slot)] > 1)
            throw Error(ErrorCode::dimension_mismatch, "channel_decode: index map repeats a symbol slot");
    }
    return out;
}

} // namespace udsc::encoders
