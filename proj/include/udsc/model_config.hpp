#pragma once

namespace udsc {

struct ModelConfig {
    int d_model = 128;
    int heads = 4;
    int ff_dim = 256;
    int image_layers = 8;
    int text_layers = 8;
    int decoder_layers = 8;
    int symbols_per_row = 8;  // k complex symbols per transmitted feature row

    int image_size = 32;
    int channels = 3;
    int patch_size = 8;
    int text_len = 12;

    int vocab_size = 0;   // filled from the vocabulary
    int num_answers = 0;  // filled from the VQA answer set
    int retrieval_dim = 32;
    double triplet_margin = 0.2;

    int image_rows() const { return (image_size / patch_size) * (image_size / patch_size); }
    int patch_dim() const { return patch_size * patch_size * channels; }

    void validate() const;
};

} // namespace udsc
