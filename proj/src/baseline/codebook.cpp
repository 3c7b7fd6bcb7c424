#include <qinco/baseline/codebook.hpp>

namespace qinco {

Codebook::Codebook(std::size_t k, std::size_t d, std::vector<float> entries)
    : k_(k), d_(d), entries_(std::move(entries)) {
    QINCO_CHECK(entries_.size() == k_ * d_, "entries length != k*d");
}

} // namespace qinco
