#include "bagau/params.hpp"

#include <cmath>
#include <stdexcept>

namespace bagau {

template <typename T>
int ParameterSet<T>::add_param(std::string name, std::string block, nn::Shape4 shape) {
    if (param_index_.contains(name) || buffer_index_.contains(name)) {
        throw std::invalid_argument("duplicate tensor name '" + name + "'");
    }
    const int idx = static_cast<int>(params_.size());
    param_index_[name] = idx;
    params_.push_back(NamedTensor<T>{std::move(name), std::move(block), nn::Tensor<T>(shape)});
    return idx;
}

template <typename T>
int ParameterSet<T>::add_buffer(std::string name, std::string block, nn::Shape4 shape, T fill) {
    if (param_index_.contains(name) || buffer_index_.contains(name)) {
        throw std::invalid_argument("duplicate tensor name '" + name + "'");
    }
    const int idx = static_cast<int>(buffers_.size());
    buffer_index_[name] = idx;
    buffers_.push_back(
        NamedTensor<T>{std::move(name), std::move(block), nn::Tensor<T>(shape, fill)});
    return idx;
}

template <typename T>
std::optional<int> ParameterSet<T>::find_param(const std::string& name) const {
    auto it = param_index_.find(name);
    return it == param_index_.end() ? std::nullopt : std::optional<int>(it->second);
}

template <typename T>
std::optional<int> ParameterSet<T>::find_buffer(const std::string& name) const {
    auto it = buffer_index_.find(name);
    return it == buffer_index_.end() ? std::nullopt : std::optional<int>(it->second);
}

template <typename T>
const nn::Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
    if (auto i = find_param(name)) {
        return params_[*i].value;
    }
    if (auto i = find_buffer(name)) {
        return buffers_[*i].value;
    }
    throw std::out_of_range("no tensor named '" + name + "'");
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value.numel();
    }
    return n;
}

template <typename T>
bool ParameterSet<T>::all_finite() const {
    for (const auto* group : {&params_, &buffers_}) {
        for (const auto& p : *group) {
            for (T v : p.value.vec()) {
                if (!std::isfinite(v)) {
                    return false;
                }
            }
        }
    }
    return true;
}

template <typename T>
std::vector<nn::Tensor<T>> ParameterSet<T>::zeros_like() const {
    std::vector<nn::Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) {
        out.emplace_back(p.value.shape());
    }
    return out;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace bagau
