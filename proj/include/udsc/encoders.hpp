#pragma once

// Per-modality semantic encoders (transformer stacks with a prepended task
// embedding) and channel encoders mapping feature rows to unit-power
// complex symbols.

#include <map>
#include <span>
#include <vector>

#include "udsc/channel.hpp"
#include "udsc/model_config.hpp"
#include "udsc/nn.hpp"
#include "udsc/tasks.hpp"

namespace udsc::encoders {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// Where each transmitted symbol came from.
struct SymbolSource {
    int row = 0;   // feature row index in the encoder output
    int slot = 0;  // symbol index within that row
};

struct ChannelSymbols {
    channel::ComplexVector symbols;
    std::vector<SymbolSource> index_map;
    bool degenerate_power = false;
};

class SemanticEncoder {
public:
    SemanticEncoder(nn::ParameterStore& store, const ModelConfig& cfg, Modality modality, nn::Rng& rng);

    Modality modality() const { return modality_; }
    int positions() const { return positions_; }

    // `patches` holds `batch` consecutive groups of image_rows() patch vectors.
    Var encode_patches(Tape& t, const Matrix& patches, int batch, TaskId task) const;
    // `tokens` holds `batch` consecutive groups of text_len ids.
    Var encode_tokens(Tape& t, std::span<const int> tokens, int batch, TaskId task) const;

    std::string prefix() const;

private:
    Var run(Tape& t, Var embedded, int batch, TaskId task) const;

    Modality modality_;
    int positions_;
    int width_;
    nn::Linear patch_embedding_;
    ad::Parameter* token_table_ = nullptr;
    ad::Parameter* position_table_ = nullptr;
    std::map<TaskId, ad::Parameter*> task_embeddings_;
    std::vector<nn::EncoderLayer> layers_;
};

// Fully connected compressor: d -> d (ReLU) -> 2k reals per row, followed by
// per-transmission power normalisation.
class ChannelEncoder {
public:
    ChannelEncoder(nn::ParameterStore& store, const ModelConfig& cfg, Modality modality, nn::Rng& rng);

    // Raw 2k-wide rows before normalisation.
    Var compress(Tape& t, Var features) const;
    // Compress and normalise; `rows_per_block` rows form one transmission.
    Var operator()(Tape& t, Var features, int rows_per_block) const;

private:
    nn::Linear hidden_, out_;
};

// Pairs reals (2j, 2j+1) of each row into complex symbols, row-major.
ChannelSymbols pack_symbols(const Matrix& rows);
// Inverse of pack_symbols, validated against the index map.
Matrix unpack_symbols(const channel::ComplexVector& symbols, const std::vector<SymbolSource>& index_map,
                      int symbols_per_row);

} // namespace udsc::encoders
