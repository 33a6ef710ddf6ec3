#include "udsc/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <cereal/archives/binary.hpp>
#include <cereal/types/map.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/tuple.hpp>
#include <cereal/types/vector.hpp>
#include <zlib.h>

#include "udsc/error.hpp"

namespace udsc {

template <class Archive>
void serialize(Archive& ar, ModelConfig& c) {
    ar(c.d_model, c.heads, c.ff_dim, c.image_layers, c.text_layers, c.decoder_layers, c.symbols_per_row,
       c.image_size, c.channels, c.patch_size, c.text_len, c.vocab_size, c.num_answers, c.retrieval_dim,
       c.triplet_margin);
}

} // namespace udsc

namespace Eigen {

template <class Archive>
void save(Archive& ar, const udsc::ad::Matrix& m) {
    ar(static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols()));
    ar(cereal::binary_data(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double)));
}

template <class Archive>
void load(Archive& ar, udsc::ad::Matrix& m) {
    std::int64_t rows = 0, cols = 0;
    ar(rows, cols);
    if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32))
        throw udsc::Error(udsc::ErrorCode::corrupted_stream, "checkpoint: implausible matrix shape");
    m.resize(rows, cols);
    ar(cereal::binary_data(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double)));
}

} // namespace Eigen

namespace udsc::training {

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'U', 'D', 'S', 'C'};

bool is_finite(double x) { return std::isfinite(x); }

} // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::config_invalid, m); };
    if (tasks.empty()) fail("train.tasks must not be empty");
    for (std::size_t i = 0; i < tasks.size(); ++i)
        for (std::size_t j = i + 1; j < tasks.size(); ++j)
            if (tasks[i] == tasks[j]) fail("train.tasks lists " + std::string(to_string(tasks[i])) + " twice");
    if (iterations < 0) fail("train.iterations must be >= 0");
    if (batch_size < 1) fail("train.batch_size must be >= 1");
    if (!(optimizer.lr > 0)) fail("train.lr must be positive");
    if (optimizer.weight_decay < 0) fail("train.weight_decay must be >= 0");
    if (warmup_iterations < 0) fail("train.warmup_iterations must be >= 0");
    if (sampling_exponent < 0) fail("train.sampling_exponent must be >= 0");
    for (const auto& [t, w] : loss_weights)
        if (!(w > 0) || !std::isfinite(w))
            fail("train.loss_weights." + std::string(to_string(t)) + " must be positive");
    if (log_every < 1) fail("train.log_every must be >= 1");
    if (checkpoint_every < 0 || (checkpoint_every > 0 && checkpoint_every % log_every != 0))
        fail("train.checkpoint_every must be 0 or a multiple of train.log_every");
    channel.validate();
}

std::vector<double> sampling_weights(std::span<const TaskId> tasks, const std::map<TaskId, std::size_t>& sizes,
                                     double exponent) {
    std::vector<double> w;
    for (TaskId t : tasks) {
        auto it = sizes.find(t);
        if (it == sizes.end() || it->second == 0)
            throw Error(ErrorCode::invalid_argument, "no training data for " + std::string(to_string(t)));
        w.push_back(std::pow(static_cast<double>(it->second), exponent));
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    return w;
}

std::pair<TaskId, TaskId> sample_task_pair(std::span<const TaskId> tasks, std::span<const double> weights,
                                           Rng& rng) {
    if (tasks.size() < 2) throw Error(ErrorCode::invalid_argument, "task pair sampling needs at least two tasks");
    if (weights.size() != tasks.size()) throw Error(ErrorCode::dimension_mismatch, "one weight per task required");
    std::discrete_distribution<std::size_t> first(weights.begin(), weights.end());
    const std::size_t a = first(rng);
    std::vector<double> rest(weights.begin(), weights.end());
    rest[a] = 0.0;
    if (std::accumulate(rest.begin(), rest.end(), 0.0) <= 0.0)
        throw Error(ErrorCode::invalid_argument, "task pair sampling needs two tasks with positive weight");
    std::discrete_distribution<std::size_t> second(rest.begin(), rest.end());
    return {tasks[a], tasks[second(rng)]};
}

ad::Var pairwise_adaptation(const model::TaskForward& a, const model::TaskForward& b, bool normalized) {
    auto samples = [](const model::TaskForward& f) {
        const int per = f.private_per_sample > 0 ? f.private_per_sample : f.shared_per_sample;
        const ad::Var rows = f.private_per_sample > 0 ? f.private_rows : f.shared_rows;
        return per > 0 ? static_cast<int>(rows.rows()) / per : 0;
    };
    const int pairs = std::min(samples(a), samples(b));
    ad::Tape& t = *a.loss.tape;
    if (pairs == 0) return t.constant(ad::Matrix::Zero(1, 1));
    auto rows_of = [](ad::Var v, int per, int i) {
        std::vector<int> idx(static_cast<std::size_t>(per));
        std::iota(idx.begin(), idx.end(), i * per);
        return ad::gather_rows(v, idx);
    };
    std::vector<ad::Var> terms;
    terms.reserve(static_cast<std::size_t>(pairs));
    for (int i = 0; i < pairs; ++i)
        terms.push_back(adaptation::adaptation_loss(
            rows_of(a.private_rows, a.private_per_sample, i), rows_of(a.shared_rows, a.shared_per_sample, i),
            rows_of(b.private_rows, b.private_per_sample, i), rows_of(b.shared_rows, b.shared_per_sample, i),
            normalized));
    return ad::scale(ad::sum_scalars(terms), 1.0 / pairs);
}

double StepOptions::weight(TaskId task) const {
    auto it = loss_weights.find(task);
    return it == loss_weights.end() ? 1.0 : it->second;
}

adaptation::LossBundle train_step(model::UnifiedModel& model, nn::AdamW& optimizer, const model::TaskBatch& a,
                                  const model::TaskBatch* b, const StepOptions& options, Rng& rng) {
    if (b && b->task == a.task) throw Error(ErrorCode::invalid_argument, "train_step: tasks must differ");
    model.parameters().zero_grad();
    ad::Tape tape;
    model::ForwardOptions fo;
    fo.channel = options.channel;
    const model::TaskForward fa = model.forward(tape, a, fo, rng);
    const ad::Var loss_a = options.weight(a.task) == 1.0 ? fa.loss : ad::scale(fa.loss, options.weight(a.task));
    adaptation::LossBundle bundle;
    bundle.task_loss_a = loss_a.scalar();
    ad::Var total = loss_a;
    if (b) {
        const model::TaskForward fb = model.forward(tape, *b, fo, rng);
        const ad::Var loss_b = options.weight(b->task) == 1.0 ? fb.loss : ad::scale(fb.loss, options.weight(b->task));
        bundle.task_loss_b = loss_b.scalar();
        ad::Var adapt = options.adaptation ? pairwise_adaptation(fa, fb, options.normalized)
                                           : tape.constant(ad::Matrix::Zero(1, 1));
        bundle.adaptation = adapt.scalar();
        total = ad::add(ad::add(loss_a, loss_b), adapt);
    }
    bundle.total = total.scalar();
    if (!is_finite(bundle.total))
        throw Error(ErrorCode::non_finite_loss,
                    "non-finite loss (task " + std::string(to_string(a.task)) + " " + std::to_string(bundle.task_loss_a) +
                        (b ? ", task " + std::string(to_string(b->task)) + " " + std::to_string(bundle.task_loss_b) : "") +
                        ", adaptation " + std::to_string(bundle.adaptation) + ")");
    tape.backward(total);
    optimizer.step(model.parameters());
    return bundle;
}

BatchSampler::BatchSampler(const std::map<TaskId, datasets::Dataset>& data, const ModelConfig& cfg,
                           std::uint64_t seed)
    : data_(data), cfg_(cfg), rng_(seed) {}

model::TaskBatch BatchSampler::next(TaskId task, int batch_size) {
    auto it = data_.find(task);
    if (it == data_.end() || it->second.size() == 0)
        throw Error(ErrorCode::invalid_argument, "no training data for " + std::string(to_string(task)));
    const datasets::Dataset& ds = it->second;
    if (task == TaskId::retrieval) return model::make_triplet_batch(ds, batch_size, cfg_, rng_);
    std::vector<std::size_t>& order = order_[task];
    std::size_t& cursor = cursor_[task];
    std::vector<std::size_t> idx;
    while (static_cast<int>(idx.size()) < batch_size) {
        if (cursor >= order.size()) {
            order.resize(ds.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng_);
            cursor = 0;
        }
        idx.push_back(order[cursor++]);
    }
    return model::make_batch(ds, idx, cfg_);
}

namespace {

TrainResult run_training(model::UnifiedModel& model, const datasets::DataBundle& data, const TrainConfig& cfg,
                         const LogCallback& on_log, bool joint) {
    cfg.validate();
    std::map<TaskId, std::size_t> sizes;
    for (TaskId t : cfg.tasks) {
        auto it = data.train.find(t);
        if (it == data.train.end())
            throw Error(ErrorCode::invalid_argument, "no training data for " + std::string(to_string(t)));
        sizes[t] = it->second.size();
    }
    const std::vector<double> weights = sampling_weights(cfg.tasks, sizes, cfg.sampling_exponent);
    nn::AdamW optimizer(cfg.optimizer);
    BatchSampler sampler(data.train, model.config(), cfg.seed);
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
    StepOptions step;
    step.channel = cfg.channel;
    step.adaptation = cfg.adaptation;
    step.normalized = cfg.adaptation_normalized;
    step.loss_weights = cfg.loss_weights;

    TrainResult result;
    const auto start = std::chrono::steady_clock::now();
    for (long it = 1; it <= cfg.iterations; ++it) {
        if (cfg.warmup_iterations > 0)
            optimizer.set_lr(cfg.optimizer.lr * std::min(1.0, static_cast<double>(it) / cfg.warmup_iterations));
        LossRecord rec;
        rec.iteration = it;
        model::TaskBatch ba, bb;
        if (joint && cfg.tasks.size() >= 2) {
            auto [a, b] = sample_task_pair(cfg.tasks, weights, rng);
            rec.task_a = a;
            rec.task_b = b;
            ba = sampler.next(a, cfg.batch_size);
            bb = sampler.next(b, cfg.batch_size);
        } else {
            std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
            rec.task_a = cfg.tasks[pick(rng)];
            ba = sampler.next(rec.task_a, cfg.batch_size);
        }
        try {
            rec.loss = train_step(model, optimizer, ba, rec.task_b ? &bb : nullptr, step, rng);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::non_finite_loss)
                throw Error(ErrorCode::non_finite_loss, "iteration " + std::to_string(it) + ": " + e.what());
            throw;
        }
        ++result.task_counts[rec.task_a];
        if (rec.task_b) ++result.task_counts[*rec.task_b];
        if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == 1 || it == cfg.iterations)) {
            result.history.push_back(rec);
            if (on_log) on_log(rec);
        }
        result.iterations = it;
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

} // namespace

TrainResult train(model::UnifiedModel& model, const datasets::DataBundle& data, const TrainConfig& cfg,
                  const LogCallback& on_log) {
    return run_training(model, data, cfg, on_log, true);
}

TrainResult train_single_task(model::UnifiedModel& model, const datasets::DataBundle& data, TaskId task,
                              const TrainConfig& cfg, const LogCallback& on_log) {
    TrainConfig single = cfg;
    single.tasks = {task};
    return run_training(model, data, single, on_log, false);
}

void write_loss_csv(const std::filesystem::path& file, const std::vector<LossRecord>& history) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw Error(ErrorCode::io, "cannot write " + file.string());
    out << "iteration,task_a,task_b,task_loss_a,task_loss_b,adaptation,total\n";
    out.precision(10);
    for (const LossRecord& r : history)
        out << r.iteration << ',' << to_string(r.task_a) << ',' << (r.task_b ? to_string(*r.task_b) : "") << ','
            << r.loss.task_loss_a << ',' << r.loss.task_loss_b << ',' << r.loss.adaptation << ','
            << r.loss.total << '\n';
}

// ------------------------------------------------------------ evaluation

namespace {

int argmax_row(const ad::Matrix& m, Eigen::Index row) {
    Eigen::Index best = 0;
    m.row(row).maxCoeff(&best);
    return static_cast<int>(best);
}

std::vector<int> trim_pad(std::span<const int> ids) {
    std::vector<int> out;
    for (int id : ids) {
        if (id == datasets::Vocabulary::kPad) break;
        out.push_back(id);
    }
    return out;
}

} // namespace

double evaluate_once(const model::UnifiedModel& model, const datasets::Dataset& test,
                     const model::ForwardOptions& options, Rng& rng, int batch_size, int max_samples) {
    const TaskId task = test.task;
    std::size_t n = test.size();
    if (max_samples > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(max_samples));
    if (n == 0) throw Error(ErrorCode::invalid_argument, "evaluation set is empty");
    if (batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch_size must be >= 1");
    model::ForwardOptions fo = options;
    fo.with_loss = false;
    const ModelConfig& cfg = model.config();

    std::vector<int> predictions, labels;
    ad::Matrix embeddings;
    if (task == TaskId::retrieval) embeddings.resize(static_cast<Eigen::Index>(n), cfg.retrieval_dim);
    double score_sum = 0.0;

    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        const model::TaskBatch batch = model::make_batch(test, idx, cfg);
        ad::Tape tape(false);
        const ad::Matrix out = model.forward(tape, batch, fo, rng).output.value();
        const int b = batch.size;
        switch (task) {
        case TaskId::sentiment:
        case TaskId::vqa:
            for (int i = 0; i < b; ++i) {
                predictions.push_back(argmax_row(out, i));
                labels.push_back(batch.labels[static_cast<std::size_t>(i)]);
            }
            break;
        case TaskId::retrieval:
            embeddings.middleRows(static_cast<Eigen::Index>(start), b) = out;
            labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
            break;
        case TaskId::image_recon: {
            const int rows = cfg.image_rows();
            for (int i = 0; i < b; ++i) {
                const ad::Matrix x = out.middleRows(static_cast<Eigen::Index>(i) * rows, rows);
                const ad::Matrix y = batch.patches.middleRows(static_cast<Eigen::Index>(i) * rows, rows);
                score_sum += objectives::psnr_from_mse(objectives::mse(x, y), 1.0);
            }
            break;
        }
        case TaskId::text_recon: {
            const int len = cfg.text_len;
            for (int i = 0; i < b; ++i) {
                std::vector<int> hyp_ids(static_cast<std::size_t>(len));
                for (int p = 0; p < len; ++p) hyp_ids[static_cast<std::size_t>(p)] = argmax_row(out, i * len + p);
                const std::span<const int> ref_ids(batch.tokens.data() + static_cast<std::size_t>(i) * len,
                                                   static_cast<std::size_t>(len));
                const std::vector<int> ref = trim_pad(ref_ids);
                const std::vector<int> hyp = trim_pad(hyp_ids);
                score_sum += objectives::bleu(ref, hyp);
            }
            break;
        }
        }
    }
    switch (task) {
    case TaskId::sentiment:
    case TaskId::vqa:
        return objectives::accuracy(predictions, labels);
    case TaskId::retrieval:
        return objectives::recall_at_1(embeddings, labels);
    default:
        return score_sum / static_cast<double>(n);
    }
}

std::vector<objectives::MetricReport> evaluate(const model::UnifiedModel& model, const datasets::Dataset& test,
                                               const EvalOptions& options) {
    if (options.seeds < 1) throw Error(ErrorCode::invalid_argument, "evaluation needs at least one seed");
    if (options.snr_grid.empty()) throw Error(ErrorCode::invalid_argument, "empty SNR grid");
    const std::string metric(metric_name(task_spec(test.task).metric));
    const int n = static_cast<int>(options.max_samples > 0
                                       ? std::min<std::size_t>(test.size(), static_cast<std::size_t>(options.max_samples))
                                       : test.size());
    std::optional<double> noiseless_value;
    std::vector<objectives::MetricReport> reports;
    for (double snr : options.snr_grid) {
        objectives::MetricReport r;
        r.task = test.task;
        r.snr_db = snr;
        r.metric = metric;
        r.sample_count = n;
        r.seed = options.seed;
        if (options.noiseless) {
            if (!noiseless_value) {
                model::ForwardOptions fo;
                fo.noiseless = true;
                Rng rng(options.seed);
                noiseless_value = evaluate_once(model, test, fo, rng, options.batch_size, options.max_samples);
            }
            r.value = *noiseless_value;
            r.std = 0.0;
        } else {
            std::vector<double> values;
            for (int s = 0; s < options.seeds; ++s) {
                model::ForwardOptions fo;
                fo.channel.snr_db = snr;
                fo.channel.mode = options.mode;
                fo.channel.n_t = options.n_t;
                fo.channel.n_r = options.n_r;
                Rng rng(options.seed + static_cast<std::uint64_t>(s) * 7919);
                values.push_back(evaluate_once(model, test, fo, rng, options.batch_size, options.max_samples));
            }
            const double mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
            double var = 0.0;
            for (double v : values) var += (v - mean) * (v - mean);
            r.value = mean;
            r.std = values.size() > 1 ? std::sqrt(var / (values.size() - 1)) : 0.0;
        }
        reports.push_back(r);
    }
    return reports;
}

double majority_fraction(const datasets::Dataset& dataset) {
    if (dataset.size() == 0) return 0.0;
    std::map<int, int> counts;
    for (const auto& s : dataset.samples) ++counts[s.label];
    int best = 0;
    for (const auto& [label, c] : counts) best = std::max(best, c);
    return static_cast<double>(best) / static_cast<double>(dataset.size());
}

// ------------------------------------------------------------ checkpoints

Checkpoint make_checkpoint(const model::UnifiedModel& model, const datasets::Vocabulary& vocab,
                           std::uint64_t init_seed) {
    Checkpoint c;
    c.model_config = model.config();
    for (TaskId t : kAllTasks) c.exit_layers[t] = model.exits().exit_layer_for(t);
    for (const auto& [key, part] : model.partition().entries())
        c.partition.emplace_back(key.first, key.second, part.private_rows, part.shared_rows);
    c.vocabulary = vocab.tokens();
    c.init_seed = init_seed;
    for (const ad::Parameter* p : model.parameters().all()) c.parameters[p->name] = p->value;
    return c;
}

std::unique_ptr<model::UnifiedModel> restore_model(const Checkpoint& c) {
    ExitTable exits;
    for (const auto& [t, layer] : c.exit_layers) exits.set(t, layer);
    adaptation::PartitionMap partition;
    for (const auto& [task, modality, priv, shared] : c.partition) partition.set(task, modality, {priv, shared});
    auto model = std::make_unique<model::UnifiedModel>(c.model_config, partition, exits, c.init_seed);
    for (ad::Parameter* p : model->parameters().all()) {
        auto it = c.parameters.find(p->name);
        if (it == c.parameters.end())
            throw Error(ErrorCode::schema_mismatch, "checkpoint lacks parameter " + p->name);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
            throw Error(ErrorCode::schema_mismatch, "checkpoint parameter " + p->name + " has a different shape");
        p->value = it->second;
    }
    if (c.parameters.size() != model->parameters().all().size())
        throw Error(ErrorCode::schema_mismatch, "checkpoint holds parameters the model does not define");
    return model;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& file) {
    std::ostringstream payload_stream;
    {
        cereal::BinaryOutputArchive ar(payload_stream);
        ar(c.system, c.model_config, c.exit_layers, c.partition, c.vocabulary, c.config_json, c.iteration,
           c.best_metrics, c.init_seed, c.parameters);
    }
    const std::string payload = payload_stream.str();
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
        out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
        cereal::BinaryOutputArchive ar(out);
        const std::uint64_t size = payload.size();
        ar(c.format_version, crc, size);
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw Error(ErrorCode::io, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_file, "checkpoint not found: " + file.string());
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
        throw Error(ErrorCode::corrupted_stream, "not a checkpoint: " + file.string());
    Checkpoint c;
    try {
        cereal::BinaryInputArchive header(in);
        std::uint32_t crc = 0;
        std::uint64_t size = 0;
        header(c.format_version, crc, size);
        if (c.format_version != kCheckpointVersion)
            throw Error(ErrorCode::schema_mismatch, "checkpoint format version " + std::to_string(c.format_version) +
                                                        ", expected " + std::to_string(kCheckpointVersion));
        if (size > (std::uint64_t{1} << 36)) throw Error(ErrorCode::corrupted_stream, "checkpoint size field corrupt");
        std::string payload(static_cast<std::size_t>(size), '\0');
        if (!in.read(payload.data(), static_cast<std::streamsize>(size)))
            throw Error(ErrorCode::corrupted_stream, "checkpoint truncated: " + file.string());
        const std::uint32_t actual = static_cast<std::uint32_t>(crc32(
            crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
        if (actual != crc) throw Error(ErrorCode::corrupted_stream, "checkpoint checksum mismatch: " + file.string());
        std::istringstream ps(payload);
        cereal::BinaryInputArchive ar(ps);
        ar(c.system, c.model_config, c.exit_layers, c.partition, c.vocabulary, c.config_json, c.iteration,
           c.best_metrics, c.init_seed, c.parameters);
    } catch (const cereal::Exception& e) {
        throw Error(ErrorCode::corrupted_stream, std::string("checkpoint unreadable: ") + e.what());
    }
    return c;
}

} // namespace udsc::training
