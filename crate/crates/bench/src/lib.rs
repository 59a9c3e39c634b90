//! Fixed inputs for the benchmarks, built once per bench group.

use fedface_core::attack::{capture_gradients, victim_model, CapturedGradients, ShareScope};
use fedface_core::federation::{HeadConfig, PublicUpdate};
use fedface_core::model::{ArcFaceProjector, Backbone, BackboneSpec, PublicParams};
use fedface_core::rng::{self, SimRng};
use fedface_core::Tensor;

fn uniform_images(n: usize, input: &[usize], r: &mut SimRng) -> Tensor {
    let mut shape = vec![n];
    shape.extend_from_slice(input);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng::uniform(r, 0.0, 1.0)).collect()).expect("shape matches data")
}

/// A default synthetic-identity model with a batch of random images.
pub struct TrainingFixture {
    pub backbone: Backbone,
    pub projector: ArcFaceProjector,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

pub fn training_fixture(batch: usize, classes: usize) -> TrainingFixture {
    let mut r = rng::seeded(7);
    let spec = BackboneSpec::synthetic_default();
    let backbone = Backbone::new(&spec, &mut r).expect("default arch builds");
    let projector = ArcFaceProjector::new(backbone.embedding_dim(), classes, 64.0, 0.5, &mut r);
    TrainingFixture {
        images: uniform_images(batch, &spec.input, &mut r),
        labels: (0..batch).map(|i| i % classes).collect(),
        backbone,
        projector,
    }
}

/// One `n_clients`-way round of updates shaped like the default backbone.
pub fn round_of_updates(n_clients: usize) -> Vec<PublicUpdate> {
    let mut r = rng::seeded(11);
    let backbone = Backbone::new(&BackboneSpec::synthetic_default(), &mut r).expect("default arch builds");
    (0..n_clients as u32)
        .map(|c| {
            let mut params = backbone.values();
            for (_, t) in params.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += 0.01 * rng::normal(&mut r));
            }
            PublicUpdate { client_id: c, round: 0, sample_count: 100 + c, params: PublicParams(params), skipped: false }
        })
        .collect()
}

/// The MNIST attack model with gradients captured from one random digit.
pub struct AttackFixture {
    pub backbone: Backbone,
    pub projector: ArcFaceProjector,
    pub image: Tensor,
    pub label: usize,
    pub target: CapturedGradients,
}

pub fn attack_fixture(scope: ShareScope) -> AttackFixture {
    let spec = BackboneSpec::mnist_attack();
    let (backbone, projector) = victim_model(&spec, 10, HeadConfig::default(), 0).expect("default attack model");
    let image = uniform_images(1, &spec.input, &mut rng::seeded(3));
    let target = capture_gradients(&backbone, &projector, &image, 4, scope).expect("single image");
    AttackFixture { backbone, projector, image, label: 4, target }
}

/// Well-separated genuine and impostor distance samples.
pub fn score_sets(n_genuine: usize, n_impostor: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::seeded(5);
    let genuine = (0..n_genuine).map(|_| 0.6 + 0.2 * rng::normal(&mut r)).collect();
    let impostor = (0..n_impostor).map(|_| 1.2 + 0.2 * rng::normal(&mut r)).collect();
    (genuine, impostor)
}
