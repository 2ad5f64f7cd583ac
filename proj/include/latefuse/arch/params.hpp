#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "latefuse/arch/model_config.hpp"
#include "latefuse/core/tensor.hpp"

namespace latefuse {

enum class InitKind { normal, zeros, ones, identity };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init = InitKind::normal;
};

// Every learnable tensor of a model, in a fixed order that the checkpoint
// format and the optimizer both rely on.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config);

// Exact number of learnable scalars.
std::int64_t parameter_count(const ModelConfig& config);

// Ordered, named collection of parameter tensors.
template <typename T>
class BasicParamStore {
public:
    std::size_t add(std::string name, BasicTensor<T> tensor) {
        if (index_.contains(name)) {
            throw DataError("duplicate parameter '" + name + "'");
        }
        index_.emplace(name, names_.size());
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(tensor));
        return tensors_.size() - 1;
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    BasicTensor<T>& tensor(std::size_t i) { return tensors_.at(i); }
    const BasicTensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }
    std::vector<BasicTensor<T>>& tensors() noexcept { return tensors_; }
    const std::vector<BasicTensor<T>>& tensors() const noexcept { return tensors_; }

    bool contains(const std::string& name) const { return index_.contains(name); }
    std::size_t index_of(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) {
            throw IndexError("no parameter named '" + name + "'");
        }
        return it->second;
    }
    BasicTensor<T>& at(const std::string& name) { return tensors_[index_of(name)]; }
    const BasicTensor<T>& at(const std::string& name) const { return tensors_[index_of(name)]; }

    std::int64_t scalar_count() const {
        std::int64_t n = 0;
        for (const auto& t : tensors_) n += static_cast<std::int64_t>(t.size());
        return n;
    }

    template <typename U>
    BasicParamStore<U> cast() const {
        BasicParamStore<U> out;
        for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<BasicTensor<T>> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<float>;

// normal(0, 0.02) weights, zero biases, unit norm gains, identity mixers.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

// Throws CheckpointError(config_mismatch) unless store matches the layout.
void check_params_match(const ModelConfig& config, const ParamStore& store);

// Parameter-name helpers shared by the forward pass and tests.
std::string layer_param(int layer, const std::string& leaf);
std::string head_param(int layer, int head, const std::string& leaf);

}  // namespace latefuse
