#pragma once

#include <atomic>

#include "tte/embed.hpp"

namespace tte::testing {

// Wraps the offline provider and counts round trips and sentences.
class CountingProvider final : public EmbeddingProvider {
public:
    CountingProvider(std::string model_id, std::size_t dimension) : inner_(std::move(model_id), dimension) {}

    const std::string& model_id() const override { return inner_.model_id(); }
    std::size_t dimension() const override { return inner_.dimension(); }
    std::string_view kind() const override { return "counting"; }

    std::vector<Embedding> embed(std::span<const std::string> sentences) override {
        ++requests;
        sentences_seen += sentences.size();
        return inner_.embed(sentences);
    }

    std::atomic<std::size_t> requests{0};
    std::atomic<std::size_t> sentences_seen{0};

private:
    OfflineHashProvider inner_;
};

}  // namespace tte::testing
