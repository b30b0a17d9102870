// FD check of conv2d at the production dilation r=12 on a 32x32 input.
use mvksr_core::rng::stream;
use mvksr_core::tensor::gradcheck::grad_check;
use mvksr_core::tensor::Tensor;
use rand::Rng;

fn main() {
    let mut rng = stream(1, &[0xD11]);
    let mut mk = |shape: &[usize], lo: f64, hi: f64| {
        let n: usize = shape.iter().product();
        Tensor::new_grad(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>()).unwrap()
    };
    let x = mk(&[1, 2, 32, 32], -1.0, 1.0);
    let w = mk(&[2, 2, 3, 3], -0.5, 0.5);
    let b = mk(&[2], -0.2, 0.2);
    for dil in [6usize, 12] {
        let r = grad_check(&format!("conv2d r={dil}"), &[x.clone(), w.clone(), b.clone()], 1e-4, 400, 5, |ins| {
            let out = ins[0].conv2d(&ins[1], &ins[2], dil, dil)?;
            let mut rng = stream(9, &[dil as u64]);
            let proj: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            out.mul(&Tensor::new(out.shape(), proj)?)?.mean()
        }).unwrap();
        println!("{r}");
    }
    // also the exact production shape: 16 -> 8 channels at 64x64, r=12
    let x = mk(&[1, 4, 64, 64], -1.0, 1.0);
    let w = mk(&[2, 4, 3, 3], -0.5, 0.5);
    let b = mk(&[2], -0.2, 0.2);
    let r = grad_check("conv2d r=12 64px", &[x, w, b], 1e-4, 200, 6, |ins| {
        let out = ins[0].conv2d(&ins[1], &ins[2], 12, 12)?;
        let mut rng = stream(10, &[3]);
        let proj: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        out.mul(&Tensor::new(out.shape(), proj)?)?.mean()
    }).unwrap();
    println!("{r}");
}
