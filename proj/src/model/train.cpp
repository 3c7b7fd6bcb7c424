#include <qinco/model/train.hpp>

#include <qinco/autodiff/optim.hpp>
#include <qinco/baseline/rq.hpp>
#include <qinco/model/inference.hpp>

#include <chrono>
#include <cmath>
#include <numeric>

namespace qinco {

namespace {

using Tape = ad::Tape<float>;
using Node = Tape::Node;

void add_noise(ad::Parameter<float>& p, const Codebook& base, double frac, Rng& rng) {
    const std::size_t k = base.k(), d = base.d();
    std::vector<double> mean(d, 0.0), sq(d, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += base.row(i)[j];
        }
    }
    for (auto& v : mean) v /= static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double t = base.row(i)[j] - mean[j];
            sq[j] += t * t;
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double sigma = frac * std::sqrt(sq[j] / static_cast<double>(k));
            p.value()[i * d + j] = static_cast<float>(base.row(i)[j] + sigma * rng.normal());
        }
    }
}

VectorSet ivf_residuals(const VectorSet& x, const Codebook& cents) {
    const auto nn = nearest_rows(x.data(), x.n(), cents.data(), cents.k(), cents.d());
    VectorSet r(x.n(), x.d());
    for (std::size_t i = 0; i < x.n(); ++i) {
        const auto c = cents.row(nn.index[i]);
        for (std::size_t j = 0; j < x.d(); ++j) {
            r.row(i)[j] = x.row(i)[j] - c[j];
        }
    }
    return r;
}

// One gradient shard: the differentiable pass through all steps on the codes
// chosen by the encoder.
struct Shard {
    Tape tape;
    Node x = 0;
    Node loss = 0;
    std::vector<Node> xprev; // x-hat^{m-1} per step
    double final_sq = 0.0;
};

void build_shard(Shard& sh, QincoModel& model, const CompiledModel& compiled, const VectorSet& x,
                 std::size_t begin, std::size_t end, const CodeArray& codes,
                 std::span<const code_t> buckets, float scale, const TrainOptions& opts) {
    const auto& cfg = model.config;
    const std::size_t rows = end - begin, d = cfg.d;
    auto& t = sh.tape;
    ad::Matrix<float> xm(rows, d);
    ad::Matrix<float> x0(rows, d);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.row(begin + r).data(), d, xm.row(r).data());
        if (!buckets.empty()) {
            std::copy_n(model.ivf_centroids->row(buckets[begin + r]).data(), d, x0.row(r).data());
        }
    }
    const Node xn = t.input(std::move(xm));
    sh.x = xn;
    Node xh = t.input(std::move(x0));

    CompiledNet::Scratch scratch;
    std::vector<float> gbuf, resid(d);
    std::vector<double> scores(cfg.k);
    std::vector<code_t> col(rows), top1(rows);
    Node total = 0;
    bool have_total = false;
    auto accumulate = [&](Node l) {
        total = have_total ? t.add(total, l) : l;
        have_total = true;
    };

    for (std::size_t m = 0; m < cfg.m; ++m) {
        auto& step = model.steps[m];
        sh.xprev.push_back(xh);
        for (std::size_t r = 0; r < rows; ++r) {
            col[r] = codes(begin + r, m);
        }
        const Node c = t.gather_rows(step.codebook, col);
        const Node f = step_graph(t, step.net, c, xh);
        const Node xnew = t.add(xh, f);
        accumulate(t.squared_error(xnew, xn, scale));

        if (opts.aux_weight > 0.0) {
            // Pre-selection target: the residual r^m; the top-1 candidate moves
            // towards it.
            const auto& xv = t.value(xn);
            const auto& hv = t.value(xh);
            ad::Matrix<float> rm(rows, d);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < d; ++j) {
                    resid[j] = xv(r, j) - hv(r, j);
                    rm(r, j) = resid[j];
                }
                compiled.preselect_scores(m, resid.data(), hv.row(r).data(), scores.data(),
                                          scratch, gbuf);
                top1[r] = top_a(scores, 1)[0];
            }
            Node g = t.gather_rows(step.pre_codebook, top1);
            if (step.pre_net) {
                g = step_graph(t, *step.pre_net, g, t.detach(xh));
            }
            accumulate(t.squared_error(g, t.input(std::move(rm)),
                                       scale * static_cast<float>(opts.aux_weight)));
        }
        xh = opts.detach_steps ? t.detach(xnew) : xnew;
    }
    sh.loss = total;
    const auto& xv = t.value(xn);
    const auto& hv = t.value(xh);
    for (std::size_t r = 0; r < rows; ++r) {
        sh.final_sq += squared_distance(xv.row(r).data(), hv.row(r).data(), d);
    }
    t.backward(total);
}

struct StepStats {
    std::vector<std::size_t> usage;
    std::vector<double> sum, sumsq;
    double count = 0.0;
};

std::size_t reset_dead_codewords(QincoModel& model, std::vector<StepStats>& stats, Rng& rng) {
    const std::size_t d = model.config.d;
    std::size_t resets = 0;
    for (std::size_t m = 0; m < model.steps.size(); ++m) {
        auto& st = stats[m];
        if (st.count < 2.0) {
            continue;
        }
        std::vector<double> lo(d), hi(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double mu = st.sum[j] / st.count;
            const double var = std::max(0.0, st.sumsq[j] / st.count - mu * mu);
            const double half = std::sqrt(3.0 * var);
            lo[j] = mu - half;
            hi[j] = mu + half;
        }
        auto& step = model.steps[m];
        for (std::size_t k = 0; k < model.config.k; ++k) {
            if (st.usage[k] != 0) {
                continue;
            }
            for (std::size_t j = 0; j < d; ++j) {
                const auto v = static_cast<float>(rng.uniform(lo[j], hi[j]));
                step.codebook.value()[k * d + j] = v;
                step.pre_codebook.value()[k * d + j] = v;
            }
            ++resets;
        }
    }
    return resets;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) {
        return 0.0;
    }
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

QincoModel init_from_rq(const QincoConfig& config, const VectorSet& train_sample,
                        std::uint64_t seed, const InitOptions& opts,
                        const std::optional<Codebook>& ivf_centroids) {
    config.validate();
    QINCO_CHECK(train_sample.n() >= config.k, "need at least K training vectors");
    QINCO_CHECK(train_sample.d() == config.d, "training data dimension != config.d");
    QINCO_CHECK(!config.ivf_enabled || ivf_centroids.has_value(),
                "IVF-enabled config requires centroids");
    const VectorSet fit_data =
        ivf_centroids ? ivf_residuals(train_sample, *ivf_centroids) : train_sample;
    const auto rq = rq_train(fit_data, config.m, config.k, opts.kmeans_iters, seed);

    auto model = QincoModel::zeros(config);
    model.ivf_centroids = ivf_centroids;
    for (std::size_t m = 0; m < config.m; ++m) {
        auto& step = model.steps[m];
        const auto& cb = rq.codec.codebooks[m];
        Rng noise_c(Rng::mix(seed, 100 + m)), noise_p(Rng::mix(seed, 200 + m));
        add_noise(step.codebook, cb, opts.noise, noise_c);
        add_noise(step.pre_codebook, cb, opts.noise, noise_p);
        Rng wrng(Rng::mix(seed, 300 + m));
        step.net.init_kaiming(wrng);
        if (step.pre_net) {
            Rng grng(Rng::mix(seed, 400 + m));
            step.pre_net->init_kaiming(grng);
        }
    }
    return model;
}

TrainResult train(QincoModel& model, const VectorSet& train_data, const VectorSet& val_data,
                  const TrainOptions& opts) {
    const auto& cfg = model.config;
    cfg.validate();
    QINCO_CHECK(opts.batch_size >= 1 && opts.shard_size >= 1, "batch and shard size must be >= 1");
    QINCO_CHECK(train_data.n() >= 1, "empty training set");
    QINCO_CHECK(train_data.d() == cfg.d, "training data dimension != model d");
    QINCO_CHECK(val_data.n() == 0 || val_data.d() == cfg.d, "validation dimension != model d");

    const std::size_t n = train_data.n(), d = cfg.d;
    const std::size_t per_epoch =
        opts.samples_per_epoch ? std::min(opts.samples_per_epoch, n)
                               : std::min<std::size_t>(n, 10'000'000);
    const std::size_t batches = (per_epoch + opts.batch_size - 1) / opts.batch_size;
    const ad::LrSchedule sched{opts.lr, opts.min_lr_fraction, opts.epochs * batches,
                               opts.warmup_steps};
    auto params = model.parameters();
    ad::AdamW<float> optim(params, {0.9, 0.999, 1e-8, opts.weight_decay});

    auto val_mse = [&] {
        if (val_data.n() == 0) {
            return 0.0;
        }
        const CompiledModel cm(model);
        const double v = mean_of(encode_beam(cm, val_data, cfg.a_train, cfg.b_train).losses);
        if (!std::isfinite(v)) {
            throw NumericalError("non-finite validation MSE");
        }
        return v;
    };

    TrainResult result;
    result.init_val_mse = val_mse();
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        // A rotating segment of the training set, shuffled.
        std::vector<std::size_t> order(per_epoch);
        const std::size_t start = (epoch * per_epoch) % n;
        for (std::size_t i = 0; i < per_epoch; ++i) {
            order[i] = (start + i) % n;
        }
        Rng shuffle_rng(Rng::mix(opts.seed, epoch));
        shuffle_rng.shuffle(order);

        std::vector<StepStats> stats(cfg.m);
        for (auto& s : stats) {
            s.usage.assign(cfg.k, 0);
            s.sum.assign(d, 0.0);
            s.sumsq.assign(d, 0.0);
        }
        double loss_sum = 0.0, mse_sum = 0.0;
        double lr = 0.0;

        for (std::size_t bi = 0; bi < batches; ++bi) {
            const std::size_t b0 = bi * opts.batch_size;
            const std::size_t b1 = std::min(per_epoch, b0 + opts.batch_size);
            const VectorSet batch = train_data.gather(
                std::span<const std::size_t>(order.data() + b0, b1 - b0));
            const CompiledModel compiled(model);
            const auto enc = encode_beam(compiled, batch, cfg.a_train, cfg.b_train);

            const std::size_t rows = batch.n();
            const std::size_t nshards = (rows + opts.shard_size - 1) / opts.shard_size;
            std::vector<Shard> shards(nshards);
            const float scale = 1.0F / static_cast<float>(rows);
#pragma omp parallel for schedule(dynamic, 1)
            for (std::int64_t s = 0; s < static_cast<std::int64_t>(nshards); ++s) {
                const std::size_t r0 = static_cast<std::size_t>(s) * opts.shard_size;
                const std::size_t r1 = std::min(rows, r0 + opts.shard_size);
                build_shard(shards[s], model, compiled, batch, r0, r1, enc.codes, enc.buckets,
                            scale, opts);
            }

            // Fixed-order reduction.
            optim.zero_grad();
            double batch_loss = 0.0, batch_sq = 0.0;
            for (std::size_t s = 0; s < nshards; ++s) {
                auto& sh = shards[s];
                sh.tape.flush_gradients();
                batch_loss += sh.tape.scalar(sh.loss);
                batch_sq += sh.final_sq;
                const std::size_t r0 = s * opts.shard_size;
                for (std::size_t m = 0; m < cfg.m; ++m) {
                    const auto& xv = sh.tape.value(sh.x);
                    const auto& hv = sh.tape.value(sh.xprev[m]);
                    auto& st = stats[m];
                    for (std::size_t r = 0; r < xv.rows; ++r) {
                        ++st.usage[enc.codes(r0 + r, m)];
                        for (std::size_t j = 0; j < d; ++j) {
                            const double res = static_cast<double>(xv(r, j)) - hv(r, j);
                            st.sum[j] += res;
                            st.sumsq[j] += res * res;
                        }
                    }
                    st.count += static_cast<double>(xv.rows);
                }
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericalError(
                    "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(bi) +
                    "; retry with a lower learning rate (e.g. 1e-4) or gradient clip (e.g. 0.01)");
            }
            if (opts.grad_clip > 0.0) {
                ad::clip_grad_norm(params, opts.grad_clip);
            }
            lr = ad::cosine_lr(sched, global_step++);
            optim.step(lr);
            loss_sum += batch_loss;
            mse_sum += batch_sq / static_cast<double>(rows);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        em.train_mse = batches ? mse_sum / static_cast<double>(batches) : 0.0;
        em.lr = lr;
        if (opts.reset_dead) {
            Rng reset_rng(Rng::mix(opts.seed, 1'000'000 + epoch));
            em.resets = reset_dead_codewords(model, stats, reset_rng);
        }
        em.val_mse = val_mse();
        em.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (opts.on_epoch) {
            opts.on_epoch(em);
        }
        result.epochs.push_back(em);
    }
    return result;
}

} // namespace qinco
