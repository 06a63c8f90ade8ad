use std::collections::HashSet;

use keypose::codec::{Codec, CodecConfig, TokenSequence};
use keypose::imitation::{
    assemble_imitation_prompt, assemble_language_prompt, build_task_index, parse_task_key, sample_pairs,
    ImitationError, PairSample, Prompt, RecordLookup, TaskKey,
};
use keypose::scenegen::{generate_record, BackgroundPool, DatasetCodecs, DatasetConfig, DatasetRecord};

const DEMO_TRAJECTORY: &str =
    "<loc0243><loc0423><loc0751><seg063><seg079><seg112><loc0403><loc0241><loc0732><seg063><seg079><seg112>";

fn records(n: u64) -> Vec<DatasetRecord> {
    let cfg = DatasetConfig {
        write_images: false,
        ..DatasetConfig::default()
    };
    let codecs = DatasetCodecs::new(&cfg).unwrap();
    (0..n)
        .map(|id| generate_record(&cfg, &codecs, &BackgroundPool::default(), id, None).unwrap())
        .collect()
}

#[test]
fn demo_trajectory_tokens_sit_between_state_and_live_image() {
    let codec = Codec::new(CodecConfig::default()).unwrap();
    let mut recs = records(2);
    let expected: TokenSequence = DEMO_TRAJECTORY.parse().unwrap();
    let cam = recs[0].camera.unwrap();
    recs[0].trajectory = Some(codec.decode_trajectory(&expected.0, Some(&cam)).unwrap());

    let prompt = assemble_imitation_prompt(
        PairSample {
            demo: &recs[0],
            query: &recs[1],
        },
        &codec,
    )
    .unwrap();
    let text = prompt.to_text();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "<demo_img:scene:0>");
    let state: TokenSequence = lines[1].parse().unwrap();
    assert_eq!(
        state,
        codec
            .encode_robot_state(recs[0].robot_state.as_ref().unwrap(), Some(&cam))
            .unwrap()
    );
    let traj: TokenSequence = lines[2].parse().unwrap();
    assert_eq!(traj, expected);
    assert_eq!(lines[2].replace(' ', ""), DEMO_TRAJECTORY);
    assert_eq!(lines[3], "<live_img:scene:1>");
    assert_eq!(Prompt::parse(&text).unwrap(), prompt);
    // The model input stops right before the target.
    assert!(prompt.input_text().ends_with(&format!("{}\n", lines[4])));
    assert!(!prompt.input_text().contains("<target>"));
}

#[test]
fn sampled_pairs_share_a_task_and_assemble() {
    let recs = records(400);
    let index = build_task_index(&recs).unwrap();
    let lookup = RecordLookup::new(&recs);
    let codec = Codec::new(CodecConfig::default()).unwrap();
    let k = index.num_pairs().min(50);
    assert!(k > 0, "no task shared by two scenes");
    let pairs = sample_pairs(&index, k, 3).unwrap();
    assert_eq!(pairs, sample_pairs(&index, k, 3).unwrap());
    let distinct: HashSet<_> = pairs.iter().map(|p| (p.demo, p.query)).collect();
    assert_eq!(distinct.len(), k);
    for ids in pairs {
        let pair = lookup.pair(ids).unwrap();
        let a = parse_task_key(pair.demo.instruction.as_deref().unwrap()).unwrap();
        let b = parse_task_key(pair.query.instruction.as_deref().unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(matches!(a, TaskKey::Clevr { .. }));
        let p = assemble_imitation_prompt(pair, &codec).unwrap();
        assert!(p.instruction.is_none());
        assert_eq!(Prompt::parse(&p.to_text()).unwrap(), p);
    }
}

#[test]
fn language_prompt_carries_the_instruction() {
    let recs = records(3);
    let codec = Codec::new(CodecConfig::default()).unwrap();
    let p = assemble_language_prompt(&recs[2], &codec).unwrap();
    assert_eq!(p.instruction.as_deref(), recs[2].instruction.as_deref());
    assert!(p.demo.is_none());
    assert_eq!(Prompt::parse(&p.to_text()).unwrap(), p);
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut recs = records(3);
    let codec = Codec::new(CodecConfig::default()).unwrap();
    assert!(matches!(
        assemble_imitation_prompt(
            PairSample {
                demo: &recs[0],
                query: &recs[0]
            },
            &codec
        ),
        Err(ImitationError::InvalidPair(0))
    ));
    recs[1].camera = None;
    assert!(matches!(
        assemble_language_prompt(&recs[1], &codec),
        Err(ImitationError::MissingField { field: "camera", .. })
    ));
    recs[2].scene_id = 0;
    assert!(build_task_index(&recs).is_err(), "duplicate scene ids");
    assert!(Prompt::parse("<live_img:x>\n<loc0001>\n<target>\n").is_err());
}
