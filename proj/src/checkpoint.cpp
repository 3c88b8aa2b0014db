#include "resattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace resattn {

namespace {

constexpr char kMagic[4] = {'R', 'A', 'T', 'N'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double x) { put_le(out, std::bit_cast<std::uint64_t>(x)); }

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get_le() {
        need(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return value;
    }

    double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(ModelParams& params) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    const auto refs = param_refs(params);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(refs.size()));
    for (const auto& ref : refs) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.name.size()));
        out.insert(out.end(), ref.name.begin(), ref.name.end());
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ref.shape.size()));
        for (std::size_t d : ref.shape) put_le<std::uint64_t>(out, d);
        for (double x : ref.values) put_f64(out, x);
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes);
    if (in.get_string(4) != std::string(kMagic, 4)) throw std::runtime_error("not a checkpoint (bad magic)");
    const auto version = in.get_le<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = in.get_le<std::uint32_t>();
    std::vector<CheckpointEntry> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = in.get_string(in.get_le<std::uint32_t>());
        const auto ndim = in.get_le<std::uint32_t>();
        std::uint64_t n = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            e.shape.push_back(in.get_le<std::uint64_t>());
            n *= e.shape.back();
        }
        if (n > bytes.size()) throw std::runtime_error("checkpoint truncated");
        e.values.reserve(n);
        for (std::uint64_t j = 0; j < n; ++j) e.values.push_back(in.get_f64());
        entries.push_back(std::move(e));
    }
    if (!in.done()) throw std::runtime_error("trailing bytes after checkpoint table");
    return entries;
}

void save_checkpoint(const std::filesystem::path& path, ModelParams& params) {
    const auto bytes = encode_checkpoint(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ModelParams& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto entries = decode_checkpoint(bytes);
    auto refs = param_refs(params);
    if (entries.size() != refs.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(entries.size()) + " tensors, model has " +
                                 std::to_string(refs.size()));
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& e = entries[i];
        const std::vector<std::uint64_t> shape(refs[i].shape.begin(), refs[i].shape.end());
        if (e.name != refs[i].name || e.shape != shape) {
            throw std::runtime_error("checkpoint tensor " + e.name + " does not match model tensor " + refs[i].name);
        }
        std::copy(e.values.begin(), e.values.end(), refs[i].values.begin());
    }
}

}  // namespace resattn
