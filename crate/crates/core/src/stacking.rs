use crate::image::{Image, RasterStack};

/// Per-pixel arithmetic mean over all frames.
pub fn stack_average(stack: &RasterStack) -> Image {
    let frames = stack.frames();
    let n = frames.len() as f64;
    let mut sum = vec![0.0; frames[0].data().len()];
    for f in frames {
        for (s, v) in sum.iter_mut().zip(f.data()) {
            *s += v;
        }
    }
    for s in &mut sum {
        *s /= n;
    }
    frames[0].with_data(sum)
}
