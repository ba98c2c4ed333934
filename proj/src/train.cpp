#include "hqnn/train.hpp"

#include <cmath>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "hqnn/adam.hpp"
#include "hqnn/checkpoint.hpp"
#include "hqnn/errors.hpp"
#include "hqnn/log.hpp"

namespace hqnn::train {

using autodiff::Graph;
using autodiff::Tensor;
using dataio::LabeledSample;
using models::Model;

const std::vector<std::uint64_t> kDefaultSeeds = {
    0, 12, 123, 1000, 1234, 10000, 12345, 100000, 123456, 1234567};

TrainRecord train(const TrainConfig& config, const dataio::SplitDataset& data) {
    if (config.batch_size != 1)
        throw ValidationError("batch size is fixed at 1, got " +
                              std::to_string(config.batch_size));
    if (config.epochs < 1)
        throw ValidationError("training needs at least 1 epoch");
    if (data.train.empty() || data.val.empty())
        throw ValidationError("empty train or validation split");

    Rng rng(config.seed);
    Model model = models::build_model(config.model, rng);

    autodiff::AdamState opt;
    opt.beta1 = config.beta1;
    opt.beta2 = config.beta2;
    opt.lr = config.lr;

    TrainRecord record;
    record.seed = config.seed;
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const LabeledSample& s = data.train[order[step]];
            Graph g;
            Tensor out = models::forward(g, model, s.sample.pixels);
            Tensor loss = autodiff::bce_loss(g, out, s.label);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError(
                    "non-finite loss at epoch " + std::to_string(epoch) +
                    ", sample " + std::to_string(step + 1) + " (" +
                    s.sample.source_path + ")");
            loss_sum += lv;
            for (const Tensor& p : model.params) p.storage()->grad.clear();
            g.backward(loss);
            adam_step(opt, model.params);
        }
        record.train_loss.push_back(loss_sum /
                                    static_cast<double>(order.size()));
        const double acc = evaluate_accuracy(model, data.val);
        record.val_accuracy.push_back(acc);
        if (acc > record.best_val_accuracy || record.best_epoch == 0) {
            record.best_val_accuracy = acc;
            record.best_epoch = epoch;
            if (!config.checkpoint_path.empty()) {
                save_checkpoint(model, config.checkpoint_path);
                record.checkpoint_path = config.checkpoint_path.string();
            }
        }
        log::debug("seed " + std::to_string(config.seed) + " epoch " +
                   std::to_string(epoch) + ": loss " +
                   std::to_string(record.train_loss.back()) + ", val acc " +
                   std::to_string(acc));
    }
    return record;
}

double evaluate_accuracy(const Model& model,
                         const std::vector<LabeledSample>& samples) {
    return evaluate_accuracy(model, samples, qsim::analytic_backend());
}

double evaluate_accuracy(const Model& model,
                         const std::vector<LabeledSample>& samples,
                         const qsim::QuantumBackend& backend) {
    if (samples.empty())
        throw ValidationError("cannot evaluate over an empty sample list");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        qsim::QuantumBackend b = backend;
        if (b.mode == qsim::BackendMode::sampled) b.rng_seed += i;
        Graph g;
        const double p =
            models::forward(g, model, samples[i].sample.pixels, b).item();
        const double pred = p >= 0.5 ? 1.0 : 0.0;
        if (pred == samples[i].label) ++correct;
    }
    return 100.0 * static_cast<double>(correct) /
           static_cast<double>(samples.size());
}

std::pair<double, double> variance_stats(const std::vector<double>& acc) {
    if (acc.empty())
        throw ValidationError("variance over an empty list is undefined");
    const double k = static_cast<double>(acc.size());
    double mean = 0.0;
    for (double a : acc) mean += a;
    mean /= k;
    double var = 0.0;
    for (double a : acc) var += (a - mean) * (a - mean);
    var /= k;
    return {mean, var};
}

SweepReport seed_sweep(const TrainConfig& base,
                       const std::vector<LabeledSample>& samples,
                       const std::vector<std::uint64_t>& seeds,
                       std::size_t jobs) {
    if (seeds.empty())
        throw ValidationError("seed sweep needs at least one seed");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() !=
        seeds.size())
        throw ValidationError("seed list contains duplicates");

    SweepReport report;
    report.seeds = seeds;
    report.records.resize(seeds.size());

    std::mutex next_mutex;
    std::size_t next = 0;
    std::exception_ptr failure;
    auto worker = [&]() {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (failure || next >= seeds.size()) return;
                i = next++;
            }
            try {
                TrainConfig cfg = base;
                cfg.seed = seeds[i];
                if (!base.checkpoint_path.empty())
                    cfg.checkpoint_path =
                        base.checkpoint_path.string() + ".seed" +
                        std::to_string(seeds[i]);
                const dataio::SplitDataset split = dataio::split_train_val(
                    samples, kValFraction,
                    base.split_seed.value_or(seeds[i]));
                report.records[i] = train(cfg, split);
                log::info("seed " + std::to_string(seeds[i]) + ": best acc " +
                          std::to_string(report.records[i].best_val_accuracy) +
                          " at epoch " +
                          std::to_string(report.records[i].best_epoch));
            } catch (...) {
                std::lock_guard<std::mutex> lock(next_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const std::size_t n_workers =
        std::max<std::size_t>(1, std::min(jobs, seeds.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n_workers; ++i)
            pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    for (const TrainRecord& r : report.records) {
        report.accuracies.push_back(r.best_val_accuracy);
        report.best_epochs.push_back(r.best_epoch);
    }
    const auto [mean, var] = variance_stats(report.accuracies);
    report.mean_accuracy = mean;
    report.variance = var;
    return report;
}

} // namespace hqnn::train
