//! Pseudo labels, complementary labels and the three adaptation losses on
//! hand-made similarity vectors.
//!
//!     cargo run --release --example losses

use sparse_fca::alignment::{complementary_labels, pseudo_label};
use sparse_fca::losses::{loss_cl, loss_infonce, loss_pl, loss_total};
use sparse_fca::numerics::Tensor;

fn main() -> sparse_fca::Result<()> {
    let tau = 0.07;
    let q = [0.62, 0.55, 0.10, -0.20, 0.05, -0.45];
    let y = pseudo_label(&q);
    let negatives = complementary_labels(&q, q.len() / 2)?;
    println!("similarities {q:?}");
    println!("pseudo label {y}, complementary labels {negatives:?}");
    println!("loss_pl = {:.4}", loss_pl(&q, y, tau));
    println!("loss_cl = {:.4}", loss_cl(&q, &negatives, tau));

    // The top two classes are close: if the true class were 1, the pseudo
    // label is wrong but every complementary label is still correct.
    println!("true class 1 among negatives: {}", negatives.contains(&1));

    let uniform = [0.3; 10];
    println!(
        "uniform pl over 10 classes = {:.6} (ln 10 = {:.6})",
        loss_pl(&uniform, 0, tau),
        10f32.ln()
    );

    let dense = Tensor::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ])?;
    for t in [0.05, 0.07, 0.2, 1.0] {
        println!(
            "infonce(identical orthogonal batch, tau={t}) = {:.6}",
            loss_infonce(&dense, &dense, t)?
        );
    }
    println!(
        "total = {:.4}",
        loss_total(
            loss_infonce(&dense, &dense, 1.0)?,
            loss_cl(&q, &negatives, tau),
            0.2
        )
    );
    Ok(())
}
