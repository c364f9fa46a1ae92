#include "bagau/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "bagau/config.hpp"
#include "bagau/error.hpp"

namespace bagau {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'B', 'A', 'G', 'A', 'U', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

json shape_json(const Shape4& s) { return json::array({s.n, s.c, s.h, s.w}); }

Shape4 shape_from(const json& j) {
    return Shape4{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    json index = json::array();
    std::vector<const Tensor<double>*> order;
    std::size_t offset = 0;
    auto add = [&](const std::string& group, const std::string& name, const std::string& block,
                   const Tensor<double>& t) {
        index.push_back({{"group", group},
                         {"name", name},
                         {"block", block},
                         {"shape", shape_json(t.shape())},
                         {"offset", offset}});
        order.push_back(&t);
        offset += t.numel();
    };
    const auto& ps = c.params.params();
    for (const auto& p : ps) add("param", p.name, p.block, p.value);
    for (const auto& b : c.params.buffers()) add("buffer", b.name, b.block, b.value);
    if (!c.adam_m.empty()) {
        if (c.adam_m.size() != ps.size() || c.adam_v.size() != ps.size()) {
            throw std::invalid_argument("checkpoint: optimizer state does not match parameters");
        }
        for (std::size_t i = 0; i < ps.size(); ++i) add("adam_m", ps[i].name, "", c.adam_m[i]);
        for (std::size_t i = 0; i < ps.size(); ++i) add("adam_v", ps[i].name, "", c.adam_v[i]);
    }

    const json header{{"spec", c.spec},     {"step", c.step},
                      {"epoch", c.epoch},   {"best_val_dsc", c.best_val_dsc},
                      {"rng_state", c.rng_state}, {"meta", c.meta},
                      {"tensors", index},   {"scalars", offset}};
    const std::string text = header.dump();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write checkpoint " + tmp.string());
        }
        const std::uint32_t version = kCheckpointVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic.data(), kMagic.size());
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto* t : order) {
            out.write(reinterpret_cast<const char*>(t->data()),
                      static_cast<std::streamsize>(t->numel() * sizeof(double)));
        }
        if (!out) {
            throw DataError("failed writing checkpoint " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open checkpoint " + path.string());
    }
    std::array<char, 8> magic{};
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || magic != kMagic) {
        throw DataError(path.string() + " is not a checkpoint");
    }
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    if (len > (std::uint64_t{1} << 30)) {
        throw DataError("corrupt checkpoint header in " + path.string());
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) {
        throw DataError("truncated checkpoint " + path.string());
    }

    Checkpoint c;
    try {
        const json h = json::parse(text);
        from_json(h.at("spec"), c.spec);
        c.step = h.at("step").get<std::int64_t>();
        c.epoch = h.at("epoch").get<int>();
        c.best_val_dsc = h.at("best_val_dsc").get<double>();
        c.rng_state = h.at("rng_state").get<std::string>();
        c.meta = h.at("meta");
        const std::size_t scalars = h.at("scalars").get<std::size_t>();
        std::vector<double> data(scalars);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(scalars * sizeof(double)));
        if (!in) {
            throw DataError("truncated checkpoint " + path.string());
        }
        for (const auto& e : h.at("tensors")) {
            const Shape4 s = shape_from(e.at("shape"));
            const std::size_t off = e.at("offset").get<std::size_t>();
            if (off + s.numel() > scalars) {
                throw DataError("checkpoint tensor index out of range in " + path.string());
            }
            Tensor<double> t(s, std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(off),
                                                    data.begin() + static_cast<std::ptrdiff_t>(off + s.numel())));
            const std::string group = e.at("group").get<std::string>();
            const std::string name = e.at("name").get<std::string>();
            const std::string block = e.at("block").get<std::string>();
            if (group == "param") {
                const int i = c.params.add_param(name, block, s);
                c.params.param(i) = std::move(t);
            } else if (group == "buffer") {
                const int i = c.params.add_buffer(name, block, s, 0.0);
                c.params.buffer(i) = std::move(t);
            } else if (group == "adam_m") {
                c.adam_m.push_back(std::move(t));
            } else if (group == "adam_v") {
                c.adam_v.push_back(std::move(t));
            } else {
                throw DataError("unknown tensor group '" + group + "' in " + path.string());
            }
        }
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw DataError("checkpoint " + path.string() + ": " + e.what());
    }
    return c;
}

template <typename T>
Checkpoint make_checkpoint(const Model<T>& model) {
    Checkpoint c;
    c.spec = model.spec();
    c.params = model.params().template cast<double>();
    return c;
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& c, const ModelSpec* expected) {
    if (expected != nullptr && !(*expected == c.spec)) {
        throw ConfigError("checkpoint model spec " + json(c.spec).dump() +
                          " does not match the configured spec " + json(*expected).dump());
    }
    Model<T> model(c.spec);
    try {
        model.load_params(c.params.template cast<T>());
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("checkpoint tensors do not fit the spec: ") + e.what());
    }
    return model;
}

template Checkpoint make_checkpoint<float>(const Model<float>&);
template Checkpoint make_checkpoint<double>(const Model<double>&);
template Model<float> model_from_checkpoint<float>(const Checkpoint&, const ModelSpec*);
template Model<double> model_from_checkpoint<double>(const Checkpoint&, const ModelSpec*);

}  // namespace bagau
