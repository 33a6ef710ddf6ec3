#include "udsc/model.hpp"

#include <algorithm>
#include <numeric>

#include "udsc/error.hpp"

namespace udsc::model {

namespace {

std::vector<int> iota_rows(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

// Row indices into a batch-major [batch x per_sample] layout, picking `rows`
// of every sample.
std::vector<int> batched_rows(int batch, int per_sample, std::span<const int> rows, int offset = 0) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(batch) * rows.size());
    for (int b = 0; b < batch; ++b)
        for (int r : rows) idx.push_back(offset + b * per_sample + r);
    return idx;
}

} // namespace

TaskBatch make_batch(const datasets::Dataset& dataset, std::span<const std::size_t> indices,
                     const ModelConfig& cfg) {
    const TaskSpec& spec = task_spec(dataset.task);
    TaskBatch batch;
    batch.task = dataset.task;
    batch.size = static_cast<int>(indices.size());
    const int rows = cfg.image_rows();
    if (spec.uses_image) batch.patches.resize(static_cast<Eigen::Index>(batch.size) * rows, cfg.patch_dim());
    for (int i = 0; i < batch.size; ++i) {
        const std::size_t at = indices[static_cast<std::size_t>(i)];
        if (at >= dataset.size()) throw Error(ErrorCode::index_out_of_range, "batch index out of range");
        const datasets::Sample& s = dataset.samples[at];
        if (spec.uses_image) {
            if (!s.image) throw Error(ErrorCode::invalid_argument, "sample without image");
            batch.patches.middleRows(static_cast<Eigen::Index>(i) * rows, rows) =
                datasets::patchify_image(*s.image, cfg.patch_size);
        }
        if (spec.uses_text) {
            if (!s.tokens) throw Error(ErrorCode::invalid_argument, "sample without tokens");
            if (static_cast<int>(s.tokens->size()) != cfg.text_len)
                throw Error(ErrorCode::dimension_mismatch, "token sequence length differs from model.text_len");
            batch.tokens.insert(batch.tokens.end(), s.tokens->begin(), s.tokens->end());
        }
        batch.labels.push_back(s.label);
    }
    return batch;
}

TaskBatch make_triplet_batch(const datasets::Dataset& dataset, int triplets, const ModelConfig& cfg,
                             std::mt19937_64& rng) {
    std::vector<std::size_t> a, p, n;
    for (int i = 0; i < triplets; ++i) {
        const datasets::Triplet tr = datasets::triplet_sample(dataset, rng);
        a.push_back(tr.anchor);
        p.push_back(tr.positive);
        n.push_back(tr.negative);
    }
    std::vector<std::size_t> all = a;
    all.insert(all.end(), p.begin(), p.end());
    all.insert(all.end(), n.begin(), n.end());
    return make_batch(dataset, all, cfg);
}

namespace {
ModelConfig checked(ModelConfig cfg) {
    cfg.validate();
    if (cfg.vocab_size <= 4) throw Error(ErrorCode::config_invalid, "model.vocab_size must exceed the special tokens");
    if (cfg.num_answers < 2) throw Error(ErrorCode::config_invalid, "model.num_answers must be >= 2");
    return cfg;
}
} // namespace

UnifiedModel::UnifiedModel(ModelConfig cfg, adaptation::PartitionMap partition, ExitTable exits,
                           std::uint64_t seed)
    : cfg_(checked(cfg)),
      partition_(std::move(partition)),
      exits_(exits),
      init_rng_(seed),
      image_encoder_(store_, cfg_, Modality::image, init_rng_),
      text_encoder_(store_, cfg_, Modality::text, init_rng_),
      image_channel_(store_, cfg_, Modality::image, init_rng_),
      text_channel_(store_, cfg_, Modality::text, init_rng_),
      channel_decoder_(store_, cfg_, init_rng_),
      rx_type_image_(&store_.create("rx.type.image", 1, cfg_.d_model, nn::Init::normal, init_rng_, false)),
      rx_type_text_(&store_.create("rx.type.text", 1, cfg_.d_model, nn::Init::normal, init_rng_, false)),
      rx_pos_image_(&store_.create("rx.pos.image", cfg_.image_rows(), cfg_.d_model, nn::Init::normal, init_rng_, false)),
      rx_pos_text_(&store_.create("rx.pos.text", cfg_.text_len, cfg_.d_model, nn::Init::normal, init_rng_, false)),
      decoder_(store_, cfg_, init_rng_) {
    for (TaskId task : kAllTasks) heads_.emplace(task, decoder::TaskHead(store_, cfg_, task, init_rng_));
    if (exits_.max_layer() > cfg_.decoder_layers)
        throw Error(ErrorCode::config_invalid, "exit layer " + std::to_string(exits_.max_layer()) +
                                                   " exceeds model.decoder_layers");
    partition_.validate(kAllTasks, cfg_.image_rows(), cfg_.text_len);
}

Var UnifiedModel::receive(Tape& t, Var received_rows, Modality m, std::span<const int> rows, int batch) const {
    (void)batch;
    Var x = channel_decoder_(t, received_rows);
    return rx_embed(t, x, m, rows);
}

Var UnifiedModel::rx_embed(Tape& t, Var decoded, Modality m, std::span<const int> rows) const {
    ad::Parameter* pos = m == Modality::image ? rx_pos_image_ : rx_pos_text_;
    ad::Parameter* type = m == Modality::image ? rx_type_image_ : rx_type_text_;
    Var x = ad::add_tiled(decoded, ad::gather_rows(t.param(*pos), rows));
    return ad::add_tiled(x, t.param(*type));
}

TaskForward UnifiedModel::forward(Tape& t, const TaskBatch& batch, const ForwardOptions& options,
                                  std::mt19937_64& rng) const {
    const TaskSpec& spec = task_spec(batch.task);
    const TaskId task = batch.task;
    const int n = batch.size;
    if (n <= 0) throw Error(ErrorCode::invalid_argument, "empty batch");
    if (!options.noiseless) options.channel.validate();

    TaskForward out;
    out.record.task = task;
    std::vector<Var> private_parts, shared_parts, memory_parts;
    std::vector<int> memory_widths;
    std::vector<int> private_counts, shared_counts;

    for (Modality m : {Modality::image, Modality::text}) {
        if (!spec.uses(m)) continue;
        const int per_sample = m == Modality::image ? cfg_.image_rows() : cfg_.text_len;
        Var u = m == Modality::image ? image_encoder_.encode_patches(t, batch.patches, n, task)
                                     : text_encoder_.encode_tokens(t, batch.tokens, n, task);
        const adaptation::RowPartition& part = partition_.at(task, m);
        private_parts.push_back(ad::gather_rows(u, batched_rows(n, per_sample, part.private_rows)));
        shared_parts.push_back(ad::gather_rows(u, batched_rows(n, per_sample, part.shared_rows)));
        private_counts.push_back(static_cast<int>(part.private_rows.size()));
        shared_counts.push_back(static_cast<int>(part.shared_rows.size()));

        const std::vector<int> sel = partition_.selected(task, m);
        const int r = static_cast<int>(sel.size());
        Var chosen = ad::gather_rows(u, batched_rows(n, per_sample, sel));
        const encoders::ChannelEncoder& enc = m == Modality::image ? image_channel_ : text_channel_;
        Var tx = enc(t, chosen, r);
        Var rx = options.noiseless ? tx : channel::transmit_rows(tx, r, options.channel, rng);
        memory_parts.push_back(receive(t, rx, m, sel, n));
        memory_widths.push_back(r);
        out.record.rows_selected += r;
        out.record.rows_total += per_sample;
    }
    out.record.symbols_sent = out.record.rows_selected * cfg_.symbols_per_row;

    // Interleave per-sample row groups so each sample's memory is contiguous.
    auto interleave = [&](const std::vector<Var>& parts, const std::vector<int>& widths) -> Var {
        if (parts.size() == 1) return parts.front();
        Var stacked = ad::concat_rows(parts);
        std::vector<int> idx;
        for (int b = 0; b < n; ++b) {
            int offset = 0;
            for (std::size_t p = 0; p < parts.size(); ++p) {
                for (int r = 0; r < widths[p]; ++r) idx.push_back(offset + b * widths[p] + r);
                offset += n * widths[p];
            }
        }
        return ad::gather_rows(stacked, idx);
    };
    out.private_rows = interleave(private_parts, private_counts);
    out.shared_rows = interleave(shared_parts, shared_counts);
    out.private_per_sample = std::accumulate(private_counts.begin(), private_counts.end(), 0);
    out.shared_per_sample = std::accumulate(shared_counts.begin(), shared_counts.end(), 0);
    Var memory = interleave(memory_parts, memory_widths);

    const decoder::SemanticDecoder::Run run = decoder_.decode(t, memory, n, task, exits_.exit_layer_for(task));
    out.executed_layers = run.executed;
    const decoder::TaskHead& head = heads_.at(task);
    Var state = run.states.back();

    const bool logits = task == TaskId::sentiment || task == TaskId::vqa || task == TaskId::text_recon;
    out.output = logits ? head.raw(t, state) : head(t, state);
    if (!options.with_loss) return out;

    switch (task) {
    case TaskId::sentiment:
    case TaskId::vqa:
        out.loss = ad::cross_entropy(out.output, batch.labels);
        break;
    case TaskId::retrieval: {
        if (n % 3 != 0) throw Error(ErrorCode::dimension_mismatch, "retrieval batch must hold triplets");
        const int k = n / 3;
        std::vector<int> ia(static_cast<std::size_t>(k)), ip(ia.size()), in(ia.size());
        for (int i = 0; i < k; ++i) {
            ia[static_cast<std::size_t>(i)] = i;
            ip[static_cast<std::size_t>(i)] = k + i;
            in[static_cast<std::size_t>(i)] = 2 * k + i;
        }
        out.loss = ad::triplet(ad::gather_rows(out.output, ia), ad::gather_rows(out.output, ip),
                               ad::gather_rows(out.output, in), cfg_.triplet_margin);
        break;
    }
    case TaskId::image_recon:
        out.loss = ad::mse(out.output, batch.patches);
        break;
    case TaskId::text_recon:
        out.loss = ad::cross_entropy(out.output, batch.tokens);
        break;
    }
    return out;
}

Matrix UnifiedModel::encode_image(const Matrix& patches, TaskId task) const {
    Tape t(false);
    return image_encoder_.encode_patches(t, patches, 1, task).value();
}

Matrix UnifiedModel::encode_text(std::span<const int> tokens, TaskId task) const {
    Tape t(false);
    return text_encoder_.encode_tokens(t, tokens, 1, task).value();
}

encoders::ChannelSymbols UnifiedModel::channel_encode(const Matrix& features, Modality modality) const {
    if (features.cols() != cfg_.d_model)
        throw Error(ErrorCode::dimension_mismatch, "channel_encode: feature width must equal model.d_model");
    Tape t(false);
    const encoders::ChannelEncoder& enc = modality == Modality::image ? image_channel_ : text_channel_;
    encoders::ChannelSymbols packed = encoders::pack_symbols(enc.compress(t, t.constant(features)).value());
    channel::Normalized norm = channel::power_normalize(packed.symbols);
    packed.symbols = std::move(norm.symbols);
    packed.degenerate_power = norm.degenerate;
    return packed;
}

Matrix UnifiedModel::channel_decode(const channel::ComplexVector& received,
                                    const std::vector<encoders::SymbolSource>& index_map) const {
    Matrix rows = encoders::unpack_symbols(received, index_map, cfg_.symbols_per_row);
    Tape t(false);
    return channel_decoder_(t, t.constant(rows)).value();
}

Matrix UnifiedModel::assemble_decoder_input(const std::optional<Matrix>& image, const std::optional<Matrix>& text,
                                            std::span<const int> image_rows, std::span<const int> text_rows) const {
    if (!image && !text) throw Error(ErrorCode::invalid_argument, "assemble_decoder_input: no features");
    Tape t(false);
    std::vector<Var> parts;
    auto add = [&](const Matrix& x, Modality m, std::span<const int> rows) {
        if (x.cols() != cfg_.d_model)
            throw Error(ErrorCode::dimension_mismatch, "assemble_decoder_input: width must equal model.d_model");
        std::vector<int> all;
        if (rows.empty()) {
            all = iota_rows(static_cast<int>(x.rows()));
            rows = all;
        }
        if (static_cast<Eigen::Index>(rows.size()) != x.rows())
            throw Error(ErrorCode::dimension_mismatch, "assemble_decoder_input: row index count mismatch");
        parts.push_back(rx_embed(t, t.constant(x), m, rows));
    };
    if (image) add(*image, Modality::image, image_rows);
    if (text) add(*text, Modality::text, text_rows);
    return ad::concat_rows(parts).value();
}

decoder::ExitBundle UnifiedModel::semantic_decode(const Matrix& memory, TaskId task, int exit_layer) const {
    if (memory.cols() != cfg_.d_model)
        throw Error(ErrorCode::dimension_mismatch, "semantic_decode: width must equal model.d_model");
    Tape t(false);
    const decoder::SemanticDecoder::Run run = decoder_.decode(t, t.constant(memory), 1, task, exit_layer);
    decoder::ExitBundle bundle;
    for (Var s : run.states) bundle.states.push_back(s.value());
    bundle.executed_layer_count = run.executed;
    bundle.output = bundle.states.back();
    return bundle;
}

decoder::TaskOutput UnifiedModel::task_head(const decoder::ExitBundle& bundle, TaskId task) const {
    auto it = heads_.find(task);
    if (it == heads_.end()) throw Error(ErrorCode::unknown_task, "no head for task");
    Tape t(false);
    Var x = t.constant(bundle.output);
    const bool logits = task == TaskId::sentiment || task == TaskId::vqa || task == TaskId::text_recon;
    return {task, (logits ? it->second.raw(t, x) : it->second(t, x)).value()};
}

bool UnifiedModel::in_scope(const std::string& name, TaskId task) const {
    const TaskSpec& spec = task_spec(task);
    auto starts = [&](const std::string& p) { return name.rfind(p, 0) == 0; };
    for (Modality m : {Modality::image, Modality::text}) {
        const std::string mod(to_string(m));
        if (starts("enc." + mod + ".")) {
            if (!spec.uses(m)) return false;
            const std::string task_prefix = "enc." + mod + ".task.";
            return !starts(task_prefix) || name == task_prefix + std::string(to_string(task));
        }
        if (starts("chenc." + mod + ".") || starts("rx.type." + mod) || starts("rx.pos." + mod))
            return spec.uses(m);
    }
    if (starts("chdec.")) return true;
    if (starts("dec.layer")) {
        const int layer = std::stoi(name.substr(std::string("dec.layer").size()));
        return layer < exits_.exit_layer_for(task);
    }
    if (starts("dec.query.") || starts("dec.posquery.")) {
        const std::string suffix = name.substr(name.find('.', 4) + 1);
        return suffix == std::string(to_string(task));
    }
    if (starts("head.")) return starts("head." + std::string(to_string(task)) + ".");
    return true;
}

long long UnifiedModel::count_parameters(TaskId task) const {
    return store_.count([&](const std::string& name) { return in_scope(name, task); });
}

long long UnifiedModel::count_parameters(std::span<const TaskId> tasks) const {
    return store_.count([&](const std::string& name) {
        return std::any_of(tasks.begin(), tasks.end(), [&](TaskId t) { return in_scope(name, t); });
    });
}

} // namespace udsc::model
