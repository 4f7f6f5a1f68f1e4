//! The six unstructured video elements the study models and scores.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextField {
    Title,
    Description,
    Captions,
}

impl TextField {
    pub const ALL: [TextField; 3] = [TextField::Title, TextField::Description, TextField::Captions];

    pub fn name(self) -> &'static str {
        match self {
            TextField::Title => "title",
            TextField::Description => "description",
            TextField::Captions => "captions",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStream {
    Thumbnail,
    Frames,
}

impl ImageStream {
    pub fn name(self) -> &'static str {
        match self {
            ImageStream::Thumbnail => "thumbnail",
            ImageStream::Frames => "frames",
        }
    }
}

/// One of the six unstructured channels: three text fields, the audio
/// track, and the two visual streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Element {
    Text(TextField),
    Audio,
    Image(ImageStream),
}

impl Element {
    pub const ALL: [Element; 6] = [
        Element::Text(TextField::Title),
        Element::Text(TextField::Description),
        Element::Text(TextField::Captions),
        Element::Audio,
        Element::Image(ImageStream::Thumbnail),
        Element::Image(ImageStream::Frames),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Element::Text(f) => f.name(),
            Element::Audio => "audio",
            Element::Image(s) => s.name(),
        }
    }

    pub fn parse(name: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl From<Element> for String {
    fn from(c: Element) -> String {
        c.name().to_string()
    }
}

impl TryFrom<String> for Element {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Element, String> {
        Element::parse(&s).ok_or_else(|| format!("unknown element {s:?}"))
    }
}
