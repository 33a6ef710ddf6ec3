#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"

#include <regex>

#include "udsc/error.hpp"

using namespace udsc;
using namespace udsc::model;

namespace {

const datasets::DataBundle& bundle() {
    static const datasets::DataBundle b = testing::tiny_bundle();
    return b;
}

int decoder_layer_of(const std::string& name) {
    static const std::regex re(R"(^dec\.layer(\d+)\.)");
    std::smatch m;
    return std::regex_search(name, m, re) ? std::stoi(m[1]) : -1;
}

} // namespace

TEST_CASE("executed decoder layers follow the exit table") {
    auto m = testing::tiny_model(bundle());
    const std::map<TaskId, int> expected{{TaskId::vqa, 8},
                                         {TaskId::retrieval, 6},
                                         {TaskId::image_recon, 4},
                                         {TaskId::text_recon, 3},
                                         {TaskId::sentiment, 2}};
    std::map<TaskId, int> executed;
    for (TaskId t : kAllTasks) {
        ad::Tape tape(false);
        std::mt19937_64 rng(1);
        const TaskForward f = m->forward(tape, testing::first_batch(bundle(), t, m->config()), {}, rng);
        executed[t] = f.executed_layers;
        CHECK(f.executed_layers == expected.at(t));
        CHECK(f.executed_layers == m->exit_layer_for(t));
    }
    CHECK(executed[TaskId::vqa] == 4 * executed[TaskId::sentiment]);

    const Matrix memory = m->assemble_decoder_input(
        std::nullopt, m->encode_text(bundle().test.at(TaskId::sentiment).samples[0].tokens.value(), TaskId::sentiment));
    CHECK(m->semantic_decode(memory, TaskId::sentiment, 2).executed_layer_count == 2);
    CHECK(m->semantic_decode(memory, TaskId::sentiment, 2).states.size() == 2);
}

TEST_CASE("unexecuted layers and other tasks' parameters get exactly zero gradient") {
    auto m = testing::tiny_model(bundle());
    for (TaskId task : kAllTasks) {
        m->parameters().zero_grad();
        ad::Tape tape;
        std::mt19937_64 rng(2);
        const TaskForward f = m->forward(tape, testing::first_batch(bundle(), task, m->config()), {}, rng);
        tape.backward(f.loss);
        const int exit = m->exit_layer_for(task);
        for (const ad::Parameter* p : std::as_const(*m).parameters().all()) {
            const int layer = decoder_layer_of(p->name);
            if ((layer >= exit) || !m->in_scope(p->name, task)) {
                INFO(p->name, " for ", to_string(task));
                CHECK(p->grad.norm() == 0.0);
            }
        }
        // Something inside the executed decoder stack did learn.
        double inside = 0;
        for (const ad::Parameter* p : std::as_const(*m).parameters().all())
            if (const int layer = decoder_layer_of(p->name); layer >= 0 && layer < exit) inside += p->grad.norm();
        CHECK(inside > 0.0);
    }
}

TEST_CASE("parameter scope of stripped single-task models") {
    auto m = testing::tiny_model(bundle());
    CHECK(m->in_scope("head.sentiment.proj.weight", TaskId::sentiment));
    CHECK_FALSE(m->in_scope("head.vqa.proj.weight", TaskId::sentiment));
    CHECK_FALSE(m->in_scope("enc.image.layer0.attn.q.weight", TaskId::sentiment));
    CHECK(m->in_scope("enc.image.layer0.attn.q.weight", TaskId::retrieval));
    CHECK(m->in_scope("dec.layer1.ff.up.weight", TaskId::sentiment));
    CHECK_FALSE(m->in_scope("dec.layer2.ff.up.weight", TaskId::sentiment));
    CHECK(m->in_scope("dec.layer7.ff.up.weight", TaskId::vqa));
    CHECK(m->in_scope("chdec.hidden.weight", TaskId::text_recon));
    long long summed = 0;
    for (TaskId t : kAllTasks) {
        CHECK(m->count_parameters(t) < m->count_parameters());
        summed += m->count_parameters(t);
    }
    const std::vector<TaskId> all(kAllTasks.begin(), kAllTasks.end());
    CHECK(m->count_parameters(std::span<const TaskId>(all)) == m->count_parameters());
    CHECK(m->count_parameters() < summed);
}

TEST_CASE("stored parameter reduction is at least half at the default toy config") {
    ModelConfig c;
    c.vocab_size = bundle().vocab.size();
    c.num_answers = static_cast<int>(datasets::vqa_answers().size());
    const UnifiedModel m(c, adaptation::PartitionMap::make_default(c.image_rows(), c.text_len), ExitTable{}, 1);
    long long summed = 0;
    long long previous = 0;
    for (TaskId t : kAllTasks) {
        summed += m.count_parameters(t);
        CHECK(summed >= previous);
        previous = summed;
    }
    const double reduction = 1.0 - static_cast<double>(m.count_parameters()) / summed;
    MESSAGE("unified ", m.count_parameters(), " summed ", summed, " reduction ", reduction);
    CHECK(reduction >= 0.5);
}

TEST_CASE("encode, channel and decode pipeline gradients match finite differences") {
    auto m = testing::tiny_model(bundle());
    ModelConfig c = m->config();
    std::vector<ad::Parameter*> probe;
    for (const char* name : {"chenc.image.out.bias", "chdec.out.bias", "rx.type.image", "enc.image.task.image_recon",
                             "head.image_recon.proj.bias"}) {
        ad::Parameter* p = &m->parameters().get(name);
        probe.push_back(p);
    }
    const TaskBatch batch = testing::first_batch(bundle(), TaskId::image_recon, c, 2);
    ForwardOptions opts;
    opts.channel.snr_db = 5.0;
    const double err = testing::gradient_error(probe, [&](ad::Tape& t, auto&) {
        std::mt19937_64 rng(11);
        return m->forward(t, batch, opts, rng).loss;
    });
    CHECK(err < 1e-4);
}

TEST_CASE("transmit records follow the partition") {
    auto m = testing::tiny_model(bundle());
    std::map<TaskId, int> symbols;
    for (TaskId t : kAllTasks) {
        ad::Tape tape(false);
        std::mt19937_64 rng(1);
        const TaskForward f = m->forward(tape, testing::first_batch(bundle(), t, m->config(), 1), {}, rng);
        int selected = 0, total = 0;
        for (Modality mod : {Modality::image, Modality::text})
            if (task_spec(t).uses(mod)) {
                selected += static_cast<int>(m->partition().selected(t, mod).size());
                total += mod == Modality::image ? m->config().image_rows() : m->config().text_len;
            }
        CHECK(f.record.rows_selected == selected);
        CHECK(f.record.rows_total == total);
        symbols[t] = f.record.symbols_sent;
    }
    for (TaskId s : {TaskId::sentiment, TaskId::vqa, TaskId::retrieval})
        for (TaskId r : {TaskId::image_recon, TaskId::text_recon}) CHECK(symbols[s] < symbols[r]);
}

TEST_CASE("outputs honour their activation contracts") {
    auto m = testing::tiny_model(bundle());
    ForwardOptions opts;
    opts.noiseless = true;
    std::mt19937_64 rng(1);
    {
        ad::Tape tape(false);
        const TaskForward f = m->forward(tape, testing::first_batch(bundle(), TaskId::retrieval, m->config()), opts, rng);
        const Matrix& e = f.output.value();
        for (Eigen::Index i = 0; i < e.rows(); ++i) CHECK(std::abs(e.row(i).norm() - 1.0) < 1e-6);
    }
    {
        ad::Tape tape(false);
        const TaskForward f =
            m->forward(tape, testing::first_batch(bundle(), TaskId::image_recon, m->config()), opts, rng);
        CHECK(f.output.value().minCoeff() >= 0.0);
        CHECK(f.output.value().maxCoeff() <= 1.0);
    }
}

TEST_CASE("model construction validates its inputs") {
    ModelConfig c = testing::tiny_config(bundle().vocab.size());
    const auto part = adaptation::PartitionMap::make_default(c.image_rows(), c.text_len);
    c.decoder_layers = 4;
    CHECK_THROWS_AS(UnifiedModel(c, part, ExitTable{}, 1), Error);
    c = testing::tiny_config(3);
    CHECK_THROWS_AS(UnifiedModel(c, part, ExitTable{}, 1), Error);
    c = testing::tiny_config(bundle().vocab.size());
    CHECK_THROWS_AS(UnifiedModel(c, adaptation::PartitionMap{}, ExitTable{}, 1), Error);
}
