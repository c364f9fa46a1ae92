#include "bagau/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "bagau/checkpoint.hpp"
#include "bagau/config.hpp"
#include "bagau/error.hpp"
#include "bagau/metrics.hpp"
#include "bagau/ops.hpp"
#include "bagau/tversky.hpp"

namespace bagau {

using nlohmann::json;

std::string_view to_string(Precision p) {
    return p == Precision::float32 ? "float32" : "float64";
}

Precision parse_precision(std::string_view name) {
    if (name == "float32") return Precision::float32;
    if (name == "float64") return Precision::float64;
    throw ConfigError("unknown precision '" + std::string(name) + "' (float32 or float64)");
}

void TrainConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("train.alpha must lie in (0,1)");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (accumulation_steps < 1) throw ConfigError("train.accumulation_steps must be >= 1");
    if (!(smooth_eps > 0.0)) throw ConfigError("train.smooth_eps must be positive");
    if (bn_group < 0) throw ConfigError("train.bn_group must be >= 0");
    if (bn_group > 0 && batch_size % bn_group != 0) {
        throw ConfigError("train.bn_group must divide train.batch_size");
    }
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("train.threshold must lie in [0,1]");
    if (augment.rotation_deg < 0 || augment.shear < 0 || augment.scale < 0 ||
        augment.scale >= 1.0 || augment.mirror_prob < 0 || augment.mirror_prob > 1) {
        throw ConfigError("train.augment ranges must be non-negative (scale < 1, mirror_prob <= 1)");
    }
    if (overfit_slices < 1) throw ConfigError("train.overfit_slices must be >= 1");
}

std::string to_json_line(const EpochRecord& r) {
    return json{{"epoch", r.epoch},
                {"train_loss", r.train_loss},
                {"val_dsc", r.val_dsc},
                {"lr", r.lr},
                {"wall_time", r.wall_time}}
        .dump();
}

EpochRecord parse_epoch_record(const std::string& line) {
    try {
        const json j = json::parse(line);
        return EpochRecord{j.at("epoch").get<int>(), j.at("train_loss").get<double>(),
                           j.at("val_dsc").get<double>(), j.at("lr").get<double>(),
                           j.at("wall_time").get<double>()};
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed history line: ") + e.what());
    }
}

std::vector<EpochRecord> read_history(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read history " + path.string());
    }
    std::vector<EpochRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(parse_epoch_record(line));
    }
    return out;
}

template <typename T>
Adam<T>::Adam(const ParameterSet<T>& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(params.zeros_like()),
      v_(params.zeros_like()) {}

template <typename T>
void Adam<T>::step(ParameterSet<T>& params, const std::vector<Tensor<T>>& grads) {
    if (grads.size() != m_.size()) {
        throw std::invalid_argument("adam: gradient count does not match parameters");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        T* p = params.param(static_cast<int>(i)).data();
        T* m = m_[i].data();
        T* v = v_[i].data();
        const T* g = grads[i].data();
        for (std::size_t k = 0; k < grads[i].numel(); ++k) {
            const double gk = g[k];
            const double mk = beta1_ * m[k] + (1.0 - beta1_) * gk;
            const double vk = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            p[k] = static_cast<T>(p[k] - lr_ * (mk / c1) / (std::sqrt(vk / c2) + eps_));
        }
    }
}

template class Adam<float>;
template class Adam<double>;

CaseRecord normalized(const CaseRecord& c) {
    return CaseRecord(c.case_id(), normalize_zscore(c.flair()), c.atlas(), c.mask());
}

TrainData prepare_data(const Manifest& m, const DatasetSplit& split, Canvas canvas) {
    TrainData d;
    d.split = split;
    std::vector<SliceBatch> parts;
    for (const auto& id : split.train) {
        const CaseRecord c = load_case(case_dir(m.root, id), id, true);
        parts.push_back(extract_slices(normalized(c), canvas, false));
    }
    d.train_slices = SliceBatch::concat(parts);
    for (const auto& id : split.val) {
        d.val_cases.push_back(load_case(case_dir(m.root, id), id, true));
    }
    return d;
}

template <typename T>
PredictionVolume predict_case(const Model<T>& model, const CaseRecord& c,
                              const PredictOptions& opt) {
    const ModelSpec& spec = model.spec();
    if (opt.canvas && (opt.canvas->h != spec.canvas_h || opt.canvas->w != spec.canvas_w)) {
        throw ConfigError("configured canvas " + std::to_string(opt.canvas->h) + "x" +
                          std::to_string(opt.canvas->w) + " does not match the model canvas " +
                          std::to_string(spec.canvas_h) + "x" + std::to_string(spec.canvas_w));
    }
    if (opt.chunk < 1) {
        throw ConfigError("prediction chunk must be >= 1");
    }
    const SliceBatch s = extract_slices(normalized(c), Canvas{spec.canvas_h, spec.canvas_w}, true);
    Tensor<float> probs(Shape4{s.size(), 1, spec.canvas_h, spec.canvas_w});
    for (int first = 0; first < s.size(); first += opt.chunk) {
        const int count = std::min(opt.chunk, s.size() - first);
        const Tensor<T> p =
            model.predict(nn::slice_batch(s.flair, first, count).template cast<T>(),
                          nn::slice_batch(s.atlas, first, count).template cast<T>());
        std::copy(p.vec().begin(), p.vec().end(),
                  probs.vec().begin() + static_cast<std::ptrdiff_t>(first) * p.numel() / count);
    }
    PredictionVolume out;
    out.probability = restack_slices(probs, s.slice_index, c.shape(), VolumeKind::probability,
                                     c.flair().spacing);
    out.mask = Volume3D(c.shape(), VolumeKind::mask, c.flair().spacing);
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
        out.mask.data[i] = out.probability.data[i] > opt.threshold ? 1.0f : 0.0f;
    }
    return out;
}

template <typename T>
double validation_dsc(const Model<T>& model, const std::vector<CaseRecord>& cases,
                      double threshold) {
    double sum = 0.0;
    int n = 0;
    PredictOptions po;
    po.threshold = threshold;
    for (const auto& c : cases) {
        if (!c.mask()) continue;
        sum += dsc(predict_case(model, c, po).mask, *c.mask());
        ++n;
    }
    if (n == 0) {
        throw DataError("validation needs at least one case with a mask");
    }
    return sum / n;
}

namespace {

// Same shuffle as the dataset split, so the order depends only on the seed.
void shuffle(std::vector<int>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng() % i]);
    }
}

bool augmenting(const AugmentConfig& a) {
    return a.rotation_deg > 0 || a.shear > 0 || a.scale > 0 || a.mirror_prob > 0;
}

json config_without_epochs(const TrainConfig& cfg) {
    json j = cfg;
    j.erase("epochs");
    return j;
}

Volume3D stack_volume(const Tensor<float>& t, VolumeKind kind) {
    const Shape4 s = t.shape();
    Volume3D v({s.n, s.h, s.w}, kind);
    v.data = t.vec();
    return v;
}

template <typename T>
class Trainer {
public:
    Trainer(const ModelSpec& spec, const TrainConfig& cfg, const TrainData& data,
            std::filesystem::path out_dir, const TrainOptions& opt)
        : cfg_(cfg), data_(data), out_(std::move(out_dir)), opt_(opt), model_(spec),
          adam_(model_.params(), cfg.lr), grads_(model_.params().zeros_like()), rng_(cfg.seed) {}

    TrainResult run() {
        std::filesystem::create_directories(out_);
        const auto hist_path = out_ / kHistoryFile;
        TrainResult result;
        int start = 0;
        if (opt_.resume) {
            start = restore(result);
            std::ofstream h(hist_path, std::ios::trunc);
            for (const auto& r : result.history) h << to_json_line(r) << '\n';
        } else {
            std::ofstream h(hist_path, std::ios::trunc);
        }

        const SliceBatch* pool = &data_.train_slices;
        SliceBatch fixed;
        if (cfg_.overfit) {
            fixed = overfit_batch();
        } else {
            if (data_.val_cases.empty()) {
                throw ConfigError("the validation split is empty");
            }
            if (pool->size() < effective_batch()) {
                throw ConfigError("training set has " + std::to_string(pool->size()) +
                                  " slices, fewer than one effective batch of " +
                                  std::to_string(effective_batch()));
            }
        }

        for (int epoch = start + 1; epoch <= cfg_.epochs; ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            EpochRecord rec;
            rec.epoch = epoch;
            rec.lr = cfg_.lr;
            if (cfg_.overfit) {
                rec.train_loss = step(fixed, epoch);
                rec.val_dsc = batch_dsc(fixed);
            } else {
                std::vector<int> order(static_cast<std::size_t>(pool->size()));
                std::iota(order.begin(), order.end(), 0);
                shuffle(order, rng_);
                const int eff = effective_batch();
                const int steps = pool->size() / eff;
                double sum = 0.0;
                for (int s = 0; s < steps; ++s) {
                    SliceBatch batch = pool->select(
                        std::span<const int>(order).subspan(static_cast<std::size_t>(s) * eff, eff));
                    if (augmenting(cfg_.augment)) {
                        batch = augment(batch, rng_, cfg_.augment);
                    }
                    sum += step(batch, epoch);
                }
                rec.train_loss = sum / steps;
                rec.val_dsc = validation_dsc(model_, data_.val_cases, cfg_.threshold);
            }
            rec.wall_time =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

            result.history.push_back(rec);
            {
                std::ofstream h(hist_path, std::ios::app);
                h << to_json_line(rec) << '\n';
            }
            if (rec.val_dsc > result.best_val_dsc) {
                result.best_val_dsc = rec.val_dsc;
                result.best_epoch = epoch;
                save(out_ / kBestCheckpoint, epoch, result, false);
            }
            save(out_ / kLastCheckpoint, epoch, result, true);
            if (opt_.on_epoch) opt_.on_epoch(rec);
        }
        return result;
    }

private:
    int effective_batch() const { return cfg_.batch_size * cfg_.accumulation_steps; }

    SliceBatch overfit_batch() const {
        const SliceBatch& pool = data_.train_slices;
        std::vector<int> pick;
        const std::size_t plane = pool.mask.shape().plane();
        for (int i = 0; i < pool.size() && static_cast<int>(pick.size()) < cfg_.overfit_slices; ++i) {
            const float* m = pool.mask.plane(i, 0);
            if (std::any_of(m, m + plane, [](float v) { return v > 0.5f; })) pick.push_back(i);
        }
        if (static_cast<int>(pick.size()) < cfg_.overfit_slices) {
            throw DataError("overfit mode needs " + std::to_string(cfg_.overfit_slices) +
                            " slices with lesions, found " + std::to_string(pick.size()));
        }
        return pool.select(pick);
    }

    Var input(Graph<T>& g, const Tensor<float>& t) const { return g.input(t.template cast<T>()); }

    ForwardOutput forward(Graph<T>& g, const SliceBatch& b, bool with_grads) {
        ForwardOptions<T> fo;
        fo.training = true;
        fo.bn_group = cfg_.bn_group;
        if (with_grads) {
            fo.grads = &grads_;
            fo.stats_sink = &model_.params();
        }
        const Var f = input(g, b.flair);
        const Var a = model_.spec().variant == Variant::unet_flair ? Var{} : input(g, b.atlas);
        return model_.forward(g, f, a, fo);
    }

    void backward(Graph<T>& g, const ForwardOutput& out, const Tensor<float>& mask,
                  const TverskyGrad& k) {
        Tensor<T> coeff(mask.shape());
        for (std::size_t i = 0; i < coeff.numel(); ++i) coeff[i] = static_cast<T>(k.at(mask[i]));
        const Var l = nn::weighted_sum(g, out.prob, coeff);
        g.backward(l, Tensor<T>(Shape4{1, 1, 1, 1}, T(1)));
    }

    // One optimizer step on `batch`. The loss is computed over the whole
    // effective batch, so with several micro-batches a gradient-free pass
    // first pools the soft counts that every micro-batch's gradient needs.
    double step(const SliceBatch& batch, int epoch) {
        std::vector<SliceBatch> parts;
        for (int first = 0; first < batch.size(); first += cfg_.batch_size) {
            const int count = std::min(cfg_.batch_size, batch.size() - first);
            std::vector<int> idx(static_cast<std::size_t>(count));
            std::iota(idx.begin(), idx.end(), first);
            parts.push_back(batch.select(idx));
        }
        for (auto& gt : grads_) gt.fill(T(0));

        TverskyCounts counts;
        double loss = 0.0;
        if (parts.size() == 1) {
            Graph<T> g(true);
            const ForwardOutput out = forward(g, parts[0], true);
            counts = tversky_counts<T>(g.value(out.prob).span(),
                                       parts[0].mask.template cast<T>().span());
            loss = checked_loss(counts, batch, epoch);
            backward(g, out, parts[0].mask, tversky_loss_grad(counts, cfg_.alpha, cfg_.smooth_eps));
        } else {
            for (const auto& p : parts) {
                Graph<T> g(false);
                const ForwardOutput out = forward(g, p, false);
                counts += tversky_counts<T>(g.value(out.prob).span(),
                                            p.mask.template cast<T>().span());
            }
            loss = checked_loss(counts, batch, epoch);
            const TverskyGrad k = tversky_loss_grad(counts, cfg_.alpha, cfg_.smooth_eps);
            for (const auto& p : parts) {
                Graph<T> g(true);
                backward(g, forward(g, p, true), p.mask, k);
            }
        }
        for (const auto& gt : grads_) {
            for (T v : gt.vec()) {
                if (!std::isfinite(v)) abort_with_dump(batch, epoch, loss, "non-finite gradient");
            }
        }
        adam_.step(model_.params(), grads_);
        if (!model_.params().all_finite()) {
            abort_with_dump(batch, epoch, loss, "non-finite parameters after the update");
        }
        return loss;
    }

    double checked_loss(const TverskyCounts& c, const SliceBatch& batch, int epoch) {
        const double loss = 1.0 - tversky_index(c, cfg_.alpha, cfg_.smooth_eps);
        if (!std::isfinite(loss)) abort_with_dump(batch, epoch, loss, "non-finite loss");
        return loss;
    }

    [[noreturn]] void abort_with_dump(const SliceBatch& batch, int epoch, double loss,
                                      const std::string& why) {
        const auto dir = out_ / "nan_dump";
        try {
            std::filesystem::create_directories(dir);
            json skipped = json::array();
            auto dump = [&](const Tensor<float>& t, VolumeKind kind, const char* name) {
                try {
                    save_volume(stack_volume(t, kind), dir / (std::string(name) + ".nii.gz"));
                } catch (const DataError&) {
                    skipped.push_back(name);  // e.g. the non-finite input itself
                }
            };
            dump(batch.flair, VolumeKind::flair, "flair");
            dump(batch.atlas, VolumeKind::atlas, "atlas");
            dump(batch.mask, VolumeKind::mask, "mask");
            std::ofstream meta(dir / "meta.json");
            meta << json{{"reason", why},
                         {"epoch", epoch},
                         {"step", adam_.steps() + 1},
                         {"loss", std::isfinite(loss) ? json(loss) : json(std::to_string(loss))},
                         {"case_ids", batch.case_ids},
                         {"slice_index", batch.slice_index},
                         {"unwritable_volumes", skipped}}
                        .dump(2)
                 << '\n';
        } catch (const std::exception&) {
            // The abort below is what matters; a failed dump must not mask it.
        }
        throw NumericalAbort(why + " at epoch " + std::to_string(epoch) + "; batch dumped to " +
                             dir.string());
    }

    double batch_dsc(const SliceBatch& b) const {
        const Tensor<T> p = model_.predict(b.flair.template cast<T>(), b.atlas.template cast<T>());
        Volume3D pred = stack_volume(b.mask, VolumeKind::mask);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            pred.data[i] = p[i] > cfg_.threshold ? 1.0f : 0.0f;
        }
        return dsc(pred, stack_volume(b.mask, VolumeKind::mask));
    }

    json meta(const TrainResult& r) const {
        return json{{"train", cfg_},
                    {"split", data_.split},
                    {"split_hash", data_.split.hash()},
                    {"precision", std::string(to_string(cfg_.precision))},
                    {"best_epoch", r.best_epoch}};
    }

    void save(const std::filesystem::path& path, int epoch, const TrainResult& r,
              bool with_optimizer) {
        Checkpoint c = make_checkpoint(model_);
        c.step = adam_.steps();
        c.epoch = epoch;
        c.best_val_dsc = r.best_val_dsc;
        c.meta = meta(r);
        if (with_optimizer) {
            for (const auto& t : adam_.m()) c.adam_m.push_back(t.template cast<double>());
            for (const auto& t : adam_.v()) c.adam_v.push_back(t.template cast<double>());
            std::ostringstream s;
            s << rng_;
            c.rng_state = s.str();
        }
        save_checkpoint(c, path);
    }

    int restore(TrainResult& r) {
        const auto path = out_ / kLastCheckpoint;
        if (!std::filesystem::exists(path)) {
            throw ConfigError("cannot resume: " + path.string() + " does not exist");
        }
        const Checkpoint c = load_checkpoint(path);
        model_ = model_from_checkpoint<T>(c, &model_.spec());
        const json& m = c.meta;
        if (!m.contains("split_hash") || m.at("split_hash") != data_.split.hash()) {
            throw ConfigError("cannot resume: the checkpoint was trained on a different split");
        }
        TrainConfig stored;
        from_json(m.at("train"), stored);
        if (config_without_epochs(stored) != config_without_epochs(cfg_)) {
            throw ConfigError("cannot resume: training configuration differs from the checkpoint");
        }
        if (c.adam_m.size() != grads_.size() || c.rng_state.empty()) {
            throw DataError("cannot resume: " + path.string() + " has no optimizer state");
        }
        for (std::size_t i = 0; i < grads_.size(); ++i) {
            adam_.m()[i] = c.adam_m[i].template cast<T>();
            adam_.v()[i] = c.adam_v[i].template cast<T>();
        }
        adam_.set_steps(c.step);
        std::istringstream s(c.rng_state);
        s >> rng_;

        const auto hist = out_ / kHistoryFile;
        if (std::filesystem::exists(hist)) {
            for (const auto& rec : read_history(hist)) {
                if (rec.epoch <= c.epoch) r.history.push_back(rec);
            }
        }
        if (static_cast<int>(r.history.size()) != c.epoch) {
            throw DataError("cannot resume: history file does not cover the checkpoint's epochs");
        }
        r.best_val_dsc = c.best_val_dsc;
        r.best_epoch = m.value("best_epoch", 0);
        return c.epoch;
    }

    TrainConfig cfg_;
    const TrainData& data_;
    std::filesystem::path out_;
    TrainOptions opt_;
    Model<T> model_;
    Adam<T> adam_;
    std::vector<Tensor<T>> grads_;
    std::mt19937_64 rng_;
};

}  // namespace

TrainResult train(const ModelSpec& spec, const TrainConfig& cfg, const TrainData& data,
                  const std::filesystem::path& out_dir, const TrainOptions& opt) {
    spec.validate();
    cfg.validate();
    if (cfg.precision == Precision::float64) {
        return Trainer<double>(spec, cfg, data, out_dir, opt).run();
    }
    return Trainer<float>(spec, cfg, data, out_dir, opt).run();
}

template PredictionVolume predict_case<float>(const Model<float>&, const CaseRecord&,
                                              const PredictOptions&);
template PredictionVolume predict_case<double>(const Model<double>&, const CaseRecord&,
                                               const PredictOptions&);
template double validation_dsc<float>(const Model<float>&, const std::vector<CaseRecord>&, double);
template double validation_dsc<double>(const Model<double>&, const std::vector<CaseRecord>&,
                                       double);

}  // namespace bagau
