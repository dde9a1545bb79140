#include "lungnas/checkpoint.hpp"

namespace lungnas {

std::vector<double> flatten_weights(Network& network) {
    std::vector<double> out;
    for (Parameter* p : network.parameters()) out.insert(out.end(), p->value.data().begin(), p->value.data().end());
    return out;
}

std::vector<double> flatten_buffers(Network& network) {
    std::vector<double> out;
    for (BatchNormStats* s : network.batch_norm_stats()) {
        out.insert(out.end(), s->running_mean.begin(), s->running_mean.end());
        out.insert(out.end(), s->running_var.begin(), s->running_var.end());
    }
    return out;
}

std::vector<char> encode_checkpoint(Network& network) {
    ByteWriter w;
    w.bytes(std::string_view(kCheckpointTag, 4));
    w.str32(format_spec(network.spec()));
    const std::string config = network.config().to_text();
    w.str32(config);
    w.u64(network.config().digest());
    w.u64(network.seed());
    const auto weights = flatten_weights(network);
    w.u64(weights.size());
    for (double v : weights) w.f64(v);
    const auto buffers = flatten_buffers(network);
    w.u64(buffers.size());
    for (double v : buffers) w.f64(v);
    return w.buffer();
}

namespace {

CheckpointHeader read_header(ByteReader& r, const std::string& what) {
    if (r.bytes(4) != std::string(kCheckpointTag, 4)) throw FormatError(what + ": bad magic (expected NLW1)");
    CheckpointHeader h;
    h.spec_text = r.str32();
    h.config_text = r.str32();
    h.digest = r.u64();
    h.seed = r.u64();
    if (hash_tag(h.config_text) != h.digest) throw FormatError(what + ": config digest mismatch");
    return h;
}

}  // namespace

Network decode_checkpoint(std::vector<char> bytes, const std::string& what) {
    ByteReader r(std::move(bytes), what);
    const CheckpointHeader h = read_header(r, what);
    Network net(parse_spec(h.spec_text), NetConfig::from_text(h.config_text), h.seed);

    const std::uint64_t n_weights = r.u64();
    const auto params = net.parameters();
    Index expected = 0;
    for (const Parameter* p : params) expected += p->size();
    if (n_weights != static_cast<std::uint64_t>(expected)) {
        throw FormatError(what + ": weight count " + std::to_string(n_weights) + " does not match architecture (" +
                          std::to_string(expected) + ")");
    }
    r.need(n_weights * 8);
    for (Parameter* p : params)
        for (Index i = 0; i < p->size(); ++i) p->value[i] = r.f64();

    const std::uint64_t n_buffers = r.u64();
    const auto stats = net.batch_norm_stats();
    Index expected_buffers = 0;
    for (const BatchNormStats* s : stats) expected_buffers += 2 * s->running_mean.size();
    if (n_buffers != static_cast<std::uint64_t>(expected_buffers)) {
        throw FormatError(what + ": buffer count does not match architecture");
    }
    r.need(n_buffers * 8);
    for (BatchNormStats* s : stats) {
        for (Index i = 0; i < s->running_mean.size(); ++i) s->running_mean[i] = r.f64();
        for (Index i = 0; i < s->running_var.size(); ++i) s->running_var[i] = r.f64();
    }
    if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after buffers");
    return net;
}

void save_checkpoint(Network& network, const std::filesystem::path& path) {
    ByteWriter w;
    const auto bytes = encode_checkpoint(network);
    w.bytes(std::string_view(bytes.data(), bytes.size()));
    w.write_file(path);
}

Network load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path), path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    return read_header(r, path.string());
}

}  // namespace lungnas
