#include "spikeforge/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace spikeforge {

static_assert(std::endian::native == std::endian::little,
              "weight container I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'P', 'K', 'F'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw std::runtime_error("weights: truncated file: " + path);
    }
    return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace

template <typename T>
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor<T>>>& named) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("weights: cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const std::uint8_t tag = dtype_tag<T>();
        os.write(reinterpret_cast<const char*>(&tag), 1);
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(sizeof(T) * static_cast<std::size_t>(t.size())));
    }
    if (!os) throw std::runtime_error("weights: write failed: " + path);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("weights: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("weights: bad magic in " + path);
    }
    const std::uint32_t version = read_u32(is, path);
    if (version != kVersion) {
        throw std::runtime_error("weights: unsupported container version " +
                                 std::to_string(version) + " in " + path);
    }
    const std::uint32_t count = read_u32(is, path);
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw std::runtime_error("weights: truncated file: " + path);
        }
        std::uint8_t tag = 0;
        if (!is.read(reinterpret_cast<char*>(&tag), 1) || tag > 1) {
            throw std::runtime_error("weights: bad dtype tag in " + path);
        }
        const std::uint32_t rank = read_u32(is, path);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::int64_t>(read_u32(is, path));
        const std::int64_t n = numel(shape);
        std::vector<T> values(static_cast<std::size_t>(n));
        if (tag == dtype_tag<T>()) {
            if (!is.read(reinterpret_cast<char*>(values.data()),
                         static_cast<std::streamsize>(sizeof(T) * values.size()))) {
                throw std::runtime_error("weights: truncated payload in " + path);
            }
        } else if (tag == 0) {
            std::vector<float> raw(static_cast<std::size_t>(n));
            if (!is.read(reinterpret_cast<char*>(raw.data()),
                         static_cast<std::streamsize>(sizeof(float) * raw.size()))) {
                throw std::runtime_error("weights: truncated payload in " + path);
            }
            for (std::size_t j = 0; j < raw.size(); ++j) values[j] = static_cast<T>(raw[j]);
        } else {
            std::vector<double> raw(static_cast<std::size_t>(n));
            if (!is.read(reinterpret_cast<char*>(raw.data()),
                         static_cast<std::streamsize>(sizeof(double) * raw.size()))) {
                throw std::runtime_error("weights: truncated payload in " + path);
            }
            for (std::size_t j = 0; j < raw.size(); ++j) values[j] = static_cast<T>(raw[j]);
        }
        out.emplace_back(std::move(name), Tensor<T>::from_data(std::move(shape), std::move(values)));
    }
    return out;
}

template <typename T>
void save_network_weights(const std::string& path, const Network<T>& net) {
    save_tensors(path, net.named_parameters());
}

template <typename T>
void load_network_weights(const std::string& path, Network<T>& net) {
    auto loaded = load_tensors<T>(path);
    std::unordered_map<std::string, Tensor<T>*> by_name;
    for (auto& [name, t] : loaded) by_name[name] = &t;
    for (auto& [name, param] : net.named_parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw std::runtime_error("weights: missing parameter '" + name + "' in " + path);
        }
        const Tensor<T>& src = *it->second;
        if (src.shape() != param.shape()) {
            throw std::runtime_error("weights: shape mismatch for '" + name + "': file has " +
                                     shape_str(src.shape()) + ", network expects " +
                                     shape_str(param.shape()));
        }
        Tensor<T> dst = param;  // shares storage with the network parameter
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
}

#define SPIKEFORGE_WIO_INSTANTIATE(T)                                                         \
    template void save_tensors<T>(const std::string&,                                        \
                                  const std::vector<std::pair<std::string, Tensor<T>>>&);    \
    template std::vector<std::pair<std::string, Tensor<T>>> load_tensors<T>(const std::string&); \
    template void save_network_weights<T>(const std::string&, const Network<T>&);            \
    template void load_network_weights<T>(const std::string&, Network<T>&);

SPIKEFORGE_WIO_INSTANTIATE(float)
SPIKEFORGE_WIO_INSTANTIATE(double)
#undef SPIKEFORGE_WIO_INSTANTIATE

}  // namespace spikeforge
